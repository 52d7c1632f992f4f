"""Soft-mask grid helpers shared by extraction, gating, and evaluation.

A mask grid is a 2-D float array with values in [0, 1]; binarization uses a
strict > threshold so that binarizing twice is a no-op.
"""

from __future__ import annotations

import numpy as np

from .geometry import BBox


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Foreground = values strictly above threshold."""
    return mask > threshold


def mask_iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    """IoU of two binarized grids; 0.0 when the union is empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch {a.shape} vs {b.shape}")
    fa = binarize(a, threshold)
    fb = binarize(b, threshold)
    union = np.logical_or(fa, fb).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(fa, fb).sum()
    return float(inter) / float(union)


def bbox_of_mask(mask: np.ndarray, threshold: float = 0.5) -> BBox | None:
    """Tight box around the binarized foreground, None when empty.

    Pixel (row, col) occupies [col, col+1) x [row, row+1), so a single
    foreground pixel at the origin yields BBox(0, 0, 1, 1).
    """
    fg = binarize(mask, threshold)
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    if rows.size == 0:
        return None
    return BBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def validate_mask(mask: np.ndarray) -> np.ndarray:
    """Check the [0, 1] value invariant, returning the array unchanged."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and (float(mask.min()) < 0.0 or float(mask.max()) > 1.0):
        raise ValueError("mask values outside [0, 1]")
    return mask
