"""Dense two-frame optical flow via quadratic polynomial expansion.

Each neighborhood of each frame is approximated by a quadratic polynomial
f(x) ~ x'Ax + b'x + c under a Gaussian applicability window; the displacement
field follows from the expansion-coefficient differences of the two frames,
averaged over a Gaussian window, and is refined coarse-to-fine over an image
pyramid. Fully deterministic for fixed inputs and parameters.

Flow convention: the field lives on the source-frame grid and points to the
destination frame, src(p) ~ dst(p + d(p)). Means over boxes are accumulated
in float64 so a constant field averages back to its exact value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import BBox
from .masks import binarize
from .tensorio import read_tensor, write_tensor

_MIN_LEVEL_DIM = 12  # coarsest pyramid level must keep this many pixels per axis


@dataclass(frozen=True, slots=True)
class FlowParams:
    pyramid_scale: float = 0.5
    levels: int = 3
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def validate(self) -> "FlowParams":
        if not (0.0 < self.pyramid_scale < 1.0):
            raise ValueError(f"pyramid_scale {self.pyramid_scale} outside (0, 1)")
        if self.levels < 1:
            raise ValueError(f"levels {self.levels} < 1")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size {self.window_size} must be odd >= 3")
        if self.iterations < 1:
            raise ValueError(f"iterations {self.iterations} < 1")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError(f"poly_n {self.poly_n} must be odd >= 3")
        if self.poly_sigma <= 0.0:
            raise ValueError(f"poly_sigma {self.poly_sigma} <= 0")
        return self


@dataclass(frozen=True, slots=True, eq=False)
class FlowField:
    """Dense displacement grids on the source frame, u = x, v = y."""

    u: np.ndarray
    v: np.ndarray
    src_index: int = 0
    dst_index: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape  # type: ignore[return-value]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


def _gaussian_1d(n: int, sigma: float) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _poly_expand(img: np.ndarray, n: int, sigma: float) -> tuple[np.ndarray, ...]:
    """Per-pixel quadratic fit, returning (a11, a22, a12, b1, b2).

    Coefficients follow f(p + (x, y)) ~ c + b1*x + b2*y + a11*x^2 + a22*y^2
    + 2*a12*x*y, fitted by Gaussian-weighted least squares over an n x n
    window with reflected borders. The normal matrix is identical at every
    pixel, so the fit reduces to six separable moment correlations and one
    fixed 6x6 solve.
    """
    m = (n - 1) // 2
    coords = np.arange(n, dtype=np.float64) - m
    g = _gaussian_1d(n, sigma)
    gx = g * coords
    gxx = g * coords * coords

    # basis = [1, x, y, x^2, y^2, xy]; G[u, v] = sum_w a(w) phi_u(w) phi_v(w)
    ones = np.ones(n)
    basis_x = [ones, coords, ones, coords**2, ones, coords]
    basis_y = [ones, ones, coords, ones, coords**2, coords]
    G = np.empty((6, 6))
    for i in range(6):
        for j in range(6):
            G[i, j] = (g * basis_x[i] * basis_x[j]).sum() * (g * basis_y[i] * basis_y[j]).sum()
    Ginv = np.linalg.inv(G)

    def corr_x(a: np.ndarray, k: np.ndarray) -> np.ndarray:
        return ndimage.correlate1d(a, k, axis=1, mode="reflect")

    def corr_y(a: np.ndarray, k: np.ndarray) -> np.ndarray:
        return ndimage.correlate1d(a, k, axis=0, mode="reflect")

    f = img.astype(np.float64, copy=False)
    t0 = corr_x(f, g)
    t1 = corr_x(f, gx)
    t2 = corr_x(f, gxx)
    moments = np.stack(
        [
            corr_y(t0, g),  # 1
            corr_y(t1, g),  # x
            corr_y(t0, gx),  # y
            corr_y(t2, g),  # x^2
            corr_y(t0, gxx),  # y^2
            corr_y(t1, gx),  # xy
        ]
    )
    theta = np.tensordot(Ginv, moments, axes=(1, 0))
    _, b1, b2, a11, a22, axy = theta
    return a11, a22, 0.5 * axy, b1, b2


def _bilinear(a: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(a, [ys, xs], order=1, mode="nearest")


def _resize_bilinear(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    fy = a.shape[0] / h
    fx = a.shape[1] / w
    ys = (np.arange(h, dtype=np.float64) + 0.5) * fy - 0.5
    xs = (np.arange(w, dtype=np.float64) + 0.5) * fx - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear(a, grid_y, grid_x)


def _pyramid(img: np.ndarray, params: FlowParams) -> list[np.ndarray]:
    s = params.pyramid_scale
    # anti-alias sigma for one downscale step
    sigma = 0.5 * math.sqrt(max(1.0 / (s * s) - 1.0, 0.0))
    levels = [img.astype(np.float64, copy=False)]
    for _ in range(params.levels - 1):
        prev = levels[-1]
        h = int(round(prev.shape[0] * s))
        w = int(round(prev.shape[1] * s))
        if min(h, w) < _MIN_LEVEL_DIM:
            break
        smoothed = ndimage.gaussian_filter(prev, sigma, mode="reflect")
        levels.append(_resize_bilinear(smoothed, (h, w)))
    return levels


def _flow_level(
    f1: np.ndarray,
    f2: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    params: FlowParams,
) -> tuple[np.ndarray, np.ndarray]:
    h, w = f1.shape
    a11_1, a22_1, a12_1, b1_1, b2_1 = _poly_expand(f1, params.poly_n, params.poly_sigma)
    a11_2, a22_2, a12_2, b1_2, b2_2 = _poly_expand(f2, params.poly_n, params.poly_sigma)
    win = _gaussian_1d(params.window_size, 0.3 * ((params.window_size - 1) * 0.5 - 1) + 0.8)
    grid_y, grid_x = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )

    def smooth(a: np.ndarray) -> np.ndarray:
        return ndimage.correlate1d(
            ndimage.correlate1d(a, win, axis=1, mode="reflect"), win, axis=0, mode="reflect"
        )

    for _ in range(params.iterations):
        ys = grid_y + v
        xs = grid_x + u
        a11 = 0.5 * (a11_1 + _bilinear(a11_2, ys, xs))
        a22 = 0.5 * (a22_1 + _bilinear(a22_2, ys, xs))
        a12 = 0.5 * (a12_1 + _bilinear(a12_2, ys, xs))
        db1 = -0.5 * (_bilinear(b1_2, ys, xs) - b1_1) + a11 * u + a12 * v
        db2 = -0.5 * (_bilinear(b2_2, ys, xs) - b2_1) + a12 * u + a22 * v
        # windowed normal equations of A d = db, solved per pixel
        m11 = smooth(a11 * a11 + a12 * a12)
        m12 = smooth(a12 * (a11 + a22))
        m22 = smooth(a22 * a22 + a12 * a12)
        h1 = smooth(a11 * db1 + a12 * db2)
        h2 = smooth(a12 * db1 + a22 * db2)
        det = m11 * m22 - m12 * m12
        safe = np.abs(det) > 1e-12
        inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
        u = (m22 * h1 - m12 * h2) * inv_det
        v = (m11 * h2 - m12 * h1) * inv_det
    return u, v


def estimate_flow(
    src: np.ndarray, dst: np.ndarray, params: FlowParams | None = None,
    src_index: int = 0, dst_index: int = 0,
) -> FlowField:
    """Dense flow from src to dst, both float grids in [0, 1], same shape."""
    params = (params or FlowParams()).validate()
    if src.shape != dst.shape:
        raise ValueError(f"frame shape mismatch {src.shape} vs {dst.shape}")
    if src.ndim != 2:
        raise ValueError(f"frames must be 2-D, got {src.ndim}-D")
    if min(src.shape) < _MIN_LEVEL_DIM:
        raise ValueError(f"frames smaller than {_MIN_LEVEL_DIM} px are not supported")
    p1 = _pyramid(src, params)
    p2 = _pyramid(dst, params)
    u = np.zeros(p1[-1].shape)
    v = np.zeros(p1[-1].shape)
    for level in range(len(p1) - 1, -1, -1):
        f1, f2 = p1[level], p2[level]
        if u.shape != f1.shape:
            scale_x = f1.shape[1] / u.shape[1]
            scale_y = f1.shape[0] / u.shape[0]
            u = _resize_bilinear(u, f1.shape) * scale_x
            v = _resize_bilinear(v, f1.shape) * scale_y
        u, v = _flow_level(f1, f2, u, v, params)
    return FlowField(
        u=u.astype(np.float32), v=v.astype(np.float32),
        src_index=src_index, dst_index=dst_index,
    )


def _box_pixel_slices(box: BBox, width: int, height: int) -> tuple[slice, slice] | None:
    """Integer pixel coordinates covered by the box clamped to the grid.

    A pixel at integer coordinate ix belongs to the box when x1 <= ix < x2,
    i.e. ix in [ceil(x1), ceil(x2) - 1]; same along y.
    """
    x1 = max(box.x1, 0.0)
    y1 = max(box.y1, 0.0)
    x2 = min(box.x2, float(width))
    y2 = min(box.y2, float(height))
    if x1 >= x2 or y1 >= y2:
        return None
    xs = math.ceil(x1)
    ys = math.ceil(y1)
    xe = math.ceil(x2)
    ye = math.ceil(y2)
    if xe <= xs or ye <= ys:
        return None
    return slice(ys, ye), slice(xs, xe)


def mean_flow_in_box(flow: FlowField, box: BBox) -> tuple[float, float]:
    """Mean (u, v) over integer pixel centers inside the clamped box.

    Accumulates in float64; raises ValueError when the clamped box covers no
    pixel centers.
    """
    h, w = flow.shape
    sl = _box_pixel_slices(box, w, h)
    if sl is None:
        raise ValueError(f"box {box.as_tuple()} covers no pixels of a {w}x{h} flow grid")
    sy, sx = sl
    count = (sy.stop - sy.start) * (sx.stop - sx.start)
    mu = float(np.sum(flow.u[sy, sx], dtype=np.float64) / count)
    mv = float(np.sum(flow.v[sy, sx], dtype=np.float64) / count)
    return mu, mv


def warp_box(box: BBox, flow: FlowField) -> BBox:
    """Translate the box by its mean flow (pure translation, no rescale)."""
    mu, mv = mean_flow_in_box(flow, box)
    return box.translate(mu, mv)


def mean_flow_magnitude_in_mask(flow: FlowField, mask: np.ndarray) -> float:
    """Mean flow magnitude over the binarized foreground of the mask."""
    if mask.shape != flow.shape:
        raise ValueError(f"mask shape {mask.shape} does not match flow {flow.shape}")
    fg = binarize(mask)
    if not fg.any():
        raise ValueError("mask has no foreground")
    return float(flow.magnitude()[fg].mean())


def save_flow(path: str | Path, flow: FlowField) -> None:
    write_tensor(path, np.stack([flow.u, flow.v]).astype(np.float32))


def load_flow(path: str | Path, src_index: int = 0, dst_index: int = 0) -> FlowField:
    arr = read_tensor(path)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"{path}: flow tensor must be [2, H, W], got {arr.shape}")
    return FlowField(u=arr[0], v=arr[1], src_index=src_index, dst_index=dst_index)
