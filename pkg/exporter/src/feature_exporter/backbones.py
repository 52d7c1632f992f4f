"""Backbone registry.

Backbone ids are caller-supplied strings, never hard-coded model lists.
Two families resolve:

* ``ref{C}p{P}`` (for example ``ref16p8``): a weightless reference backbone
  producing C channels on a P-pixel patch grid. Deterministic local patch
  statistics pushed through a projection seeded from the id, so distinct
  ids give distinct channel mixes and re-runs are bit-identical. These
  exist so the export path, container format, and manifests can be
  exercised (and tested) on machines without model weights.
* anything else is treated as a pretrained model name and is resolved
  against a local weights directory; a missing runtime or missing weights
  raises ModelLoadError before any file is written.
"""

from __future__ import annotations

import hashlib
import importlib.util
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_REF_ID = re.compile(r"^ref(\d+)p(\d+)$")

WEIGHTS_ENV = "FEATURE_EXPORTER_WEIGHTS"


class ModelLoadError(Exception):
    """A backbone or teacher model could not be loaded."""


@dataclass(frozen=True)
class ReferenceBackbone:
    backbone_id: str
    channels: int
    patch_size: int

    def extract(self, frame: np.ndarray) -> np.ndarray:
        """uint8 [H, W] frame -> float32 [H_p, W_p, C] patch features."""
        if frame.ndim != 2 or frame.dtype != np.uint8:
            raise ValueError("expected a uint8 [H, W] frame")
        p = self.patch_size
        hp, wp = frame.shape[0] // p, frame.shape[1] // p
        if hp < 1 or wp < 1:
            raise ValueError(f"frame {frame.shape} smaller than one {p}px patch")
        g = frame[: hp * p, : wp * p].astype(np.float64) / 255.0
        tiles = g.reshape(hp, p, wp, p)
        gy = np.diff(g, axis=0, prepend=g[:1])[: hp * p].reshape(hp, p, wp, p)
        gx = np.diff(g, axis=1, prepend=g[:, :1])[:, : wp * p].reshape(hp, p, wp, p)
        stats = np.stack(
            [
                tiles.mean(axis=(1, 3)),
                tiles.std(axis=(1, 3)),
                gx.mean(axis=(1, 3)),
                gy.mean(axis=(1, 3)),
            ],
            axis=-1,
        )
        w, b = self._projection()
        return np.tanh(stats @ w + b).astype(np.float32)

    def _projection(self) -> tuple[np.ndarray, np.ndarray]:
        digest = hashlib.sha256(self.backbone_id.encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        w = rng.normal(0.0, 1.0, (4, self.channels))
        b = rng.normal(0.0, 0.1, self.channels)
        return w, b


def get_backbone(backbone_id: str, weights_root: str | Path | None = None):
    """Resolve a backbone id to an object with .channels/.patch_size/.extract."""
    m = _REF_ID.match(backbone_id)
    if m:
        channels, patch = int(m.group(1)), int(m.group(2))
        if channels < 1 or patch < 1:
            raise ValueError(f"backbone id {backbone_id!r} has zero channels or patch size")
        return ReferenceBackbone(backbone_id, channels, patch)
    return _load_pretrained(backbone_id, weights_root)


def _load_pretrained(backbone_id: str, weights_root: str | Path | None):
    root = weights_root or os.environ.get(WEIGHTS_ENV)
    if root is None:
        raise ModelLoadError(
            f"no weights directory for {backbone_id!r}; pass weights_root or set {WEIGHTS_ENV}"
        )
    weights = Path(root) / f"{backbone_id}.pt"
    if not weights.is_file():
        raise ModelLoadError(f"weights file not found: {weights}")
    if importlib.util.find_spec("torch") is None:
        raise ModelLoadError(f"torch is required to load pretrained backbone {backbone_id!r}")
    # Deliberately deferred: frozen eval-mode inference over a torch model,
    # patchified to [H_p, W_p, C]. Nothing downstream depends on how the
    # grid is produced, only on the tensor contract.
    raise ModelLoadError(
        f"pretrained loader for {backbone_id!r} is not bundled in this build"
    )
