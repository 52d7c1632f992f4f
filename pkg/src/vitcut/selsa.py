"""Sequence-level semantic aggregation of RoI features.

Key-frame RoI vectors attend over support-frame RoI vectors: cosine affinity
scaled by a temperature, softmax over supports, attention-weighted sum. The
output replaces the RoI feature (no residual).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, slots=True, eq=False)
class AggregationBatch:
    key: np.ndarray  # [n_k, d]
    support: np.ndarray  # [n_s, d]
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.key.ndim != 2 or self.support.ndim != 2:
            raise ValueError("key and support must be [n, d] matrices")
        if self.key.shape[0] < 1 or self.support.shape[0] < 1:
            raise ValueError("need at least one key and one support row")
        if self.key.shape[1] != self.support.shape[1]:
            raise ValueError(
                f"feature width mismatch: {self.key.shape[1]} vs {self.support.shape[1]}"
            )
        if not (self.temperature > 0.0):
            raise ValueError(f"temperature {self.temperature} must be > 0")
        if not (np.isfinite(self.key).all() and np.isfinite(self.support).all()):
            raise ValueError("features must be finite")


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, mat / safe, 0.0)


def selsa_affinity(batch: AggregationBatch) -> np.ndarray:
    """A[i, j] = <k_i/|k_i|, s_j/|s_j|> / temperature; zero-norm rows give 0."""
    k = _unit_rows(batch.key.astype(np.float64))
    s = _unit_rows(batch.support.astype(np.float64))
    return (k @ s.T) / batch.temperature


def selsa_aggregate(batch: AggregationBatch) -> np.ndarray:
    """out_i = sum_j softmax_j(A[i, :]) * s_j, residual-free.

    The sum is anchored on the first support row (out = s_0 + w @ (S - s_0)),
    which is algebraically identical and makes an all-identical support set
    reproduce its row exactly.
    """
    aff = selsa_affinity(batch)
    shifted = aff - aff.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    w /= w.sum(axis=1, keepdims=True)
    support = batch.support.astype(np.float64)
    anchor = support[0]
    return anchor + w @ (support - anchor)


def softmax_weights(batch: AggregationBatch) -> np.ndarray:
    """The attention weights used by selsa_aggregate (rows sum to 1)."""
    aff = selsa_affinity(batch)
    shifted = aff - aff.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=1, keepdims=True)
