"""Teacher-student distillation loss kernels and the training schedule.

Segmentation loss = 0.5 * BCE + 0.3 * Dice + 0.2 * boundary, where the
boundary term compares Sobel gradient magnitudes of the predicted and target
mask grids; the total adds a scalar BCE on the objectness score. Analytic
gradients are provided for the mask grid and the score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BCE_EPS = 1e-7
DICE_SMOOTH = 1.0
SEG_WEIGHTS = (0.5, 0.3, 0.2)  # bce, dice, boundary

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


@dataclass(frozen=True, slots=True, eq=False)
class DistillSample:
    """One RoI's mask/score pair from student and teacher."""

    pred_mask: np.ndarray
    target_mask: np.ndarray
    student_score: float
    teacher_score: float

    def __post_init__(self) -> None:
        if self.pred_mask.ndim != 2 or self.pred_mask.shape != self.target_mask.shape:
            raise ValueError(
                f"mask shapes must match, got {self.pred_mask.shape} vs {self.target_mask.shape}"
            )
        if min(self.pred_mask.shape) < 3:
            raise ValueError("masks must be at least 3x3 for the boundary term")
        for name in ("student_score", "teacher_score"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} {v} outside [0, 1]")


@dataclass(frozen=True, slots=True)
class LossBreakdown:
    bce: float
    dice: float
    boundary: float
    seg: float
    score: float
    total: float


def _clamp(p: np.ndarray | float, eps: float = BCE_EPS):
    return np.clip(p, eps, 1.0 - eps)


def bce_loss(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> float:
    p = _clamp(np.asarray(pred, dtype=np.float64), eps)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))


def dice_loss(pred: np.ndarray, target: np.ndarray, smooth: float = DICE_SMOOTH) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    overlap = 2.0 * float((p * t).sum()) + smooth
    total = float(p.sum()) + float(t.sum()) + smooth
    return 1.0 - overlap / total


def sobel_magnitude(grid: np.ndarray) -> np.ndarray:
    """Gradient magnitude under 3x3 Sobel with reflected (edge-mirrored) borders."""
    g = np.asarray(grid, dtype=np.float64)
    gx, gy = _sobel_pair(np.pad(g, 1, mode="reflect"))
    return np.hypot(gx, gy)


def _sobel_pair(padded: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # factored as weighted differences so constant input cancels exactly
    h = padded.shape[0] - 2
    w = padded.shape[1] - 2
    dx = padded[:, 2:] - padded[:, :-2]
    gx = dx[:h, :] + 2.0 * dx[1 : h + 1, :] + dx[2 : h + 2, :]
    dy = padded[2:, :] - padded[:-2, :]
    gy = dy[:, :w] + 2.0 * dy[:, 1 : w + 1] + dy[:, 2 : w + 2]
    return gx, gy


def boundary_loss(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(sobel_magnitude(pred) - sobel_magnitude(target))))


def score_loss(student: float, teacher: float, eps: float = BCE_EPS) -> float:
    s = float(_clamp(student, eps))
    t = float(teacher)
    return -(t * math.log(s) + (1.0 - t) * math.log1p(-s))


def distill_loss(sample: DistillSample) -> LossBreakdown:
    """Full loss breakdown; seg and total recompose bit-exactly by construction."""
    wb, wd, wg = SEG_WEIGHTS
    bce = bce_loss(sample.pred_mask, sample.target_mask)
    dice = dice_loss(sample.pred_mask, sample.target_mask)
    boundary = boundary_loss(sample.pred_mask, sample.target_mask)
    seg = wb * bce + wd * dice + wg * boundary
    score = score_loss(sample.student_score, sample.teacher_score)
    return LossBreakdown(bce=bce, dice=dice, boundary=boundary, seg=seg, score=score, total=seg + score)


def bce_grad(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    p_raw = np.asarray(pred, dtype=np.float64)
    p = _clamp(p_raw, eps)
    t = np.asarray(target, dtype=np.float64)
    grad = (-t / p + (1.0 - t) / (1.0 - p)) / p.size
    # clipped pixels are flat in the raw prediction
    active = (p_raw > eps) & (p_raw < 1.0 - eps)
    return np.where(active, grad, 0.0)


def dice_grad(pred: np.ndarray, target: np.ndarray, smooth: float = DICE_SMOOTH) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    overlap = 2.0 * float((p * t).sum()) + smooth
    total = float(p.sum()) + float(t.sum()) + smooth
    return -(2.0 * t * total - overlap) / (total * total)


def _sobel_adjoint(grad_out: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of pad-reflect + valid 3x3 correlation."""
    h, w = grad_out.shape
    gp = np.zeros((h + 2, w + 2))
    for a in range(3):
        for b in range(3):
            k = kernel[a, b]
            if k != 0.0:
                gp[a : a + h, b : b + w] += k * grad_out
    grad = gp[1 : h + 1, 1 : w + 1].copy()
    # fold mirrored border rows/cols back onto their sources (reflect-101)
    grad[1, :] += gp[0, 1 : w + 1]
    grad[h - 2, :] += gp[h + 1, 1 : w + 1]
    grad[:, 1] += gp[1 : h + 1, 0]
    grad[:, w - 2] += gp[1 : h + 1, w + 1]
    grad[1, 1] += gp[0, 0]
    grad[1, w - 2] += gp[0, w + 1]
    grad[h - 2, 1] += gp[h + 1, 0]
    grad[h - 2, w - 2] += gp[h + 1, w + 1]
    return grad


def boundary_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    gx, gy = _sobel_pair(np.pad(p, 1, mode="reflect"))
    mag = np.hypot(gx, gy)
    target_mag = sobel_magnitude(target)
    sign = np.sign(mag - target_mag) / p.size  # sub-gradient 0 at ties
    safe = np.where(mag > 0.0, mag, 1.0)
    dgx = np.where(mag > 0.0, sign * gx / safe, 0.0)
    dgy = np.where(mag > 0.0, sign * gy / safe, 0.0)
    return _sobel_adjoint(dgx, _SOBEL_X) + _sobel_adjoint(dgy, _SOBEL_Y)


def score_grad(student: float, teacher: float, eps: float = BCE_EPS) -> float:
    s_raw = float(student)
    s = float(_clamp(s_raw, eps))
    if not (eps < s_raw < 1.0 - eps):
        return 0.0
    return -teacher / s + (1.0 - teacher) / (1.0 - s)


def loss_gradients(sample: DistillSample) -> tuple[np.ndarray, float]:
    """Analytic (d total / d pred_mask, d total / d student_score)."""
    wb, wd, wg = SEG_WEIGHTS
    grid = (
        wb * bce_grad(sample.pred_mask, sample.target_mask)
        + wd * dice_grad(sample.pred_mask, sample.target_mask)
        + wg * boundary_grad(sample.pred_mask, sample.target_mask)
    )
    return grid, score_grad(sample.student_score, sample.teacher_score)


def teacher_filter(samples: Sequence[DistillSample], threshold: float = 0.7) -> list[DistillSample]:
    """Keep samples whose teacher score is strictly above the threshold."""
    return [s for s in samples if s.teacher_score > threshold]


@dataclass(frozen=True, slots=True)
class LrSchedule:
    """Warmup, cosine decay, one warm restart, cosine decay to the floor."""

    peak: float = 2e-4
    floor: float = 1e-6
    warmup: float = 5.0
    restart: float = 20.0
    total: float = 40.0

    def validate(self) -> "LrSchedule":
        if not (0.0 < self.floor < self.peak):
            raise ValueError(f"need 0 < floor < peak, got {self.floor}, {self.peak}")
        if not (0.0 < self.warmup < self.restart < self.total):
            raise ValueError(
                f"need 0 < warmup < restart < total, got {self.warmup}, {self.restart}, {self.total}"
            )
        return self

    def lr_at(self, epoch: float) -> float:
        """Learning rate at a (possibly fractional) epoch in [0, total]."""
        self.validate()
        if epoch < 0.0 or epoch > self.total:
            raise ValueError(f"epoch {epoch} outside [0, {self.total}]")
        if epoch < self.warmup:
            return self.peak * (epoch / self.warmup)
        if epoch < self.restart:
            frac = (epoch - self.warmup) / (self.restart - self.warmup)
        else:
            frac = (epoch - self.restart) / (self.total - self.restart)
        w = (1.0 + math.cos(math.pi * frac)) / 2.0
        # convex form is exact at both endpoints
        return w * self.peak + (1.0 - w) * self.floor


def tree_sum(values: Sequence[float]) -> float:
    """Pairwise tree summation: deterministic for a given length, regardless
    of how callers batch or thread the per-sample work."""
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
