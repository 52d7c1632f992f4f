"""Box-prompted mask teachers.

``ref`` resolves to a weightless reference teacher: it crops the prompted
box, resamples it to the 64x64 grid, and scores each cell by how far its
intensity sits from the box border's intensity, squashed to (0, 1) with a
centered prior. Deterministic, no weights, and every output satisfies the
mask-grid contract (values in [0, 1], fixed resolution), which is all the
downstream loss kernels require. Any other id resolves like a pretrained
backbone and raises ModelLoadError when the runtime or weights are absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbones import ModelLoadError, _load_pretrained

MASK_SIZE = 64


@dataclass(frozen=True)
class ReferenceTeacher:
    teacher_id: str = "ref"
    mask_size: int = MASK_SIZE

    def predict(self, frame: np.ndarray, box: tuple[float, float, float, float]):
        """uint8 [H, W] frame + (x1, y1, x2, y2) -> (float32 mask, score)."""
        if frame.ndim != 2 or frame.dtype != np.uint8:
            raise ValueError("expected a uint8 [H, W] frame")
        h, w = frame.shape
        x1, y1, x2, y2 = box
        if not (x2 > x1 and y2 > y1):
            raise ValueError(f"degenerate box {box}")
        x1 = float(np.clip(x1, 0.0, w - 1.0))
        x2 = float(np.clip(x2, x1 + 1.0, w))
        y1 = float(np.clip(y1, 0.0, h - 1.0))
        y2 = float(np.clip(y2, y1 + 1.0, h))

        crop = _bilinear_crop(frame.astype(np.float64) / 255.0, x1, y1, x2, y2, self.mask_size)
        border = np.concatenate([crop[0], crop[-1], crop[:, 0], crop[:, -1]])
        contrast = np.abs(crop - border.mean())
        spread = max(float(border.std()), 1e-3)
        yy, xx = np.meshgrid(np.linspace(-1, 1, self.mask_size),
                             np.linspace(-1, 1, self.mask_size), indexing="ij")
        prior = np.exp(-(xx**2 + yy**2))  # prompted objects sit mid-box
        mask = 1.0 / (1.0 + np.exp(-(contrast / spread - 1.0))) * prior
        mask = mask.astype(np.float32)

        fg = mask > 0.5
        separation = float(contrast[fg].mean() - contrast[~fg].mean()) if fg.any() and (~fg).any() else 0.0
        score = float(1.0 / (1.0 + np.exp(-separation / spread)))
        return mask, score


def _bilinear_crop(img: np.ndarray, x1: float, y1: float, x2: float, y2: float,
                   size: int) -> np.ndarray:
    ys = np.linspace(y1, y2 - 1.0, size)
    xs = np.linspace(x1, x2 - 1.0, size)
    y0 = np.clip(np.floor(ys).astype(int), 0, img.shape[0] - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, img.shape[1] - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = img[np.ix_(y0, x0)]
    tr = img[np.ix_(y0, x0 + 1)]
    bl = img[np.ix_(y0 + 1, x0)]
    br = img[np.ix_(y0 + 1, x0 + 1)]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def get_teacher(teacher_id: str, weights_root=None):
    if teacher_id == "ref":
        return ReferenceTeacher()
    return _load_pretrained(teacher_id, weights_root)
