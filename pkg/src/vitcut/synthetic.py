"""Deterministic synthetic scenes: textured rectangles drifting over a
textured background, with exact ground truth and a configurable noise
model for candidate boxes (corner jitter, dropout, spurious detections).

All randomness flows through one numpy Generator seeded by the caller, so
a (scene, seed) pair always produces byte-identical frames and labels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import BBox, BoxSource, Candidate, FrameRef, clamp_box

_MARGIN = 1.0


@dataclass(frozen=True, slots=True)
class RectSpec:
    """One moving rectangle: size in pixels, velocity in px/frame, and a
    phase in [0, 1] that picks the start position inside the legal range."""

    size: tuple[float, float]
    velocity: tuple[float, float]
    phase: float = 0.5


@dataclass(frozen=True, slots=True)
class NoiseParams:
    jitter_sigma: float = 0.0
    dropout: float = 0.0
    spurious_rate: float = 0.0


@dataclass(slots=True)
class SyntheticScene:
    width: int
    height: int
    length: int
    rectangles: list[RectSpec] = field(default_factory=list)
    noise: NoiseParams = field(default_factory=NoiseParams)

    def validate(self) -> None:
        if self.width < 16 or self.height < 16:
            raise ValueError(f"frame too small: {self.width}x{self.height}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.noise.jitter_sigma < 0 or self.noise.spurious_rate < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not (0.0 <= self.noise.dropout <= 1.0):
            raise ValueError(f"dropout must be in [0, 1], got {self.noise.dropout}")
        for i, rect in enumerate(self.rectangles):
            w, h = rect.size
            if w < 4 or h < 4:
                raise ValueError(f"rectangle {i} smaller than 4px")
            if not (0.0 <= rect.phase <= 1.0):
                raise ValueError(f"rectangle {i} phase outside [0, 1]")
            self.start_of(i)

    def start_of(self, index: int) -> tuple[float, float]:
        """Start position keeping the rectangle inside the frame for the
        whole clip. Raises when no such position exists."""
        rect = self.rectangles[index]
        out = []
        for extent, vel, span in (
            (rect.size[0], rect.velocity[0], self.width),
            (rect.size[1], rect.velocity[1], self.height),
        ):
            travel = vel * (self.length - 1)
            lo = _MARGIN - min(0.0, travel)
            hi = span - _MARGIN - extent - max(0.0, travel)
            if hi < lo:
                raise ValueError(
                    f"rectangle {index} leaves the {span}px axis within {self.length} frames"
                )
            out.append(lo + rect.phase * (hi - lo))
        return out[0], out[1]

    def box_at(self, index: int, t: int) -> BBox:
        rect = self.rectangles[index]
        x0, y0 = self.start_of(index)
        x = x0 + rect.velocity[0] * t
        y = y0 + rect.velocity[1] * t
        return BBox(x, y, x + rect.size[0], y + rect.size[1])


@dataclass(slots=True)
class SyntheticData:
    scene: SyntheticScene
    frames: list[np.ndarray]                      # uint8 [H, W]
    gt_boxes: list[list[tuple[int, BBox]]]        # per frame: (instance id, box)
    gt_masks: list[list[np.ndarray]]              # aligned with gt_boxes
    candidates: list[list[Candidate]]


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float,
                  lo: float, hi: float) -> np.ndarray:
    raw = gaussian_filter(rng.uniform(0.0, 1.0, shape), sigma=sigma, mode="reflect")
    rmin, rmax = float(raw.min()), float(raw.max())
    if rmax - rmin < 1e-12:
        return np.full(shape, (lo + hi) / 2.0, dtype=np.float64)
    return lo + (hi - lo) * (raw - rmin) / (rmax - rmin)


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Per-cell overlap of [lo, hi) with unit cells [i, i+1), clipped to [0, 1]."""
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, hi) - np.maximum(edges, lo), 0.0, 1.0)


def _sample_texture(tex: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup on a padded texture grid, clamped at the borders."""
    h, w = tex.shape
    y = np.clip(ys, 0.0, h - 1.0)
    x = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    tl = tex[np.ix_(y0, x0)]
    tr = tex[np.ix_(y0, x1)]
    bl = tex[np.ix_(y1, x0)]
    br = tex[np.ix_(y1, x1)]
    top = tl * (1.0 - fx) + tr * fx
    bot = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bot * fy


_TEX_PAD = 2


def generate_synthetic(scene: SyntheticScene, seed: int) -> SyntheticData:
    scene.validate()
    rng = np.random.default_rng(seed)
    h, w = scene.height, scene.width

    background = _smooth_noise(rng, (h, w), sigma=1.5, lo=0.25, hi=0.6)
    textures = []
    for rect in scene.rectangles:
        rw, rh = int(np.ceil(rect.size[0])), int(np.ceil(rect.size[1]))
        textures.append(
            _smooth_noise(rng, (rh + 2 * _TEX_PAD, rw + 2 * _TEX_PAD), sigma=1.0, lo=0.5, hi=1.0)
        )

    frames: list[np.ndarray] = []
    gt_boxes: list[list[tuple[int, BBox]]] = []
    gt_masks: list[list[np.ndarray]] = []
    candidates: list[list[Candidate]] = []
    centers_y = np.arange(h, dtype=np.float64) + 0.5
    centers_x = np.arange(w, dtype=np.float64) + 0.5

    for t in range(scene.length):
        frame = background.copy()
        boxes_t: list[tuple[int, BBox]] = []
        masks_t: list[np.ndarray] = []
        for i, _ in enumerate(scene.rectangles):
            box = scene.box_at(i, t)
            alpha = np.outer(_coverage(box.y1, box.y2, h), _coverage(box.x1, box.x2, w))
            tex = _sample_texture(textures[i], centers_y - box.y1 + _TEX_PAD - 0.5,
                                  centers_x - box.x1 + _TEX_PAD - 0.5)
            frame = frame * (1.0 - alpha) + tex * alpha
            boxes_t.append((i, box))
            masks_t.append((alpha > 0.5).astype(np.float32))
        frames.append(np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8))
        gt_boxes.append(boxes_t)
        gt_masks.append(masks_t)
        candidates.append(_noisy_candidates(scene, boxes_t, t, rng))

    return SyntheticData(scene=scene, frames=frames, gt_boxes=gt_boxes,
                         gt_masks=gt_masks, candidates=candidates)


def _noisy_candidates(scene: SyntheticScene, boxes_t: list[tuple[int, BBox]],
                      t: int, rng: np.random.Generator) -> list[Candidate]:
    noise = scene.noise
    w, h = scene.width, scene.height
    frame_ref = FrameRef(video="synthetic", index=t, width=w, height=h)
    out: list[Candidate] = []
    for _, box in boxes_t:
        # Draw a fixed amount of randomness per object so the stream stays
        # aligned across noise settings.
        drop = rng.uniform()
        jit = rng.normal(0.0, 1.0, 4)
        score = rng.uniform(0.7, 0.95)
        if noise.dropout > 0.0 and drop < noise.dropout:
            continue
        if noise.jitter_sigma > 0.0:
            x1 = box.x1 + noise.jitter_sigma * jit[0]
            y1 = box.y1 + noise.jitter_sigma * jit[1]
            x2 = box.x2 + noise.jitter_sigma * jit[2]
            y2 = box.y2 + noise.jitter_sigma * jit[3]
            if x2 - x1 < 2.0:
                cx = (x1 + x2) / 2.0
                x1, x2 = cx - 1.0, cx + 1.0
            if y2 - y1 < 2.0:
                cy = (y1 + y2) / 2.0
                y1, y2 = cy - 1.0, cy + 1.0
            jittered = clamp_box(BBox(x1, y1, x2, y2), w, h)
            if jittered is None:
                continue
            box = jittered
        out.append(Candidate(box=box, score=float(score), source=BoxSource.CURRENT,
                             frame=frame_ref))

    n_spurious = int(rng.poisson(noise.spurious_rate)) if noise.spurious_rate > 0 else 0
    for _ in range(n_spurious):
        near_object = rng.uniform() < 0.5 and boxes_t
        if near_object:
            _, ref = boxes_t[int(rng.integers(len(boxes_t)))]
            shrink = rng.uniform() < 0.5
            scale = rng.uniform(0.35, 0.65) if shrink else rng.uniform(1.4, 1.9)
            cx, cy = ref.center
            cx += rng.uniform(-0.5, 0.5) * ref.width
            cy += rng.uniform(-0.5, 0.5) * ref.height
            bw, bh = ref.width * scale, ref.height * scale
        else:
            bw = rng.uniform(8.0, 0.4 * min(w, h))
            bh = rng.uniform(8.0, 0.4 * min(w, h))
            cx = rng.uniform(bw / 2.0, w - bw / 2.0)
            cy = rng.uniform(bh / 2.0, h - bh / 2.0)
        score = rng.uniform(0.5, 0.9)
        box = clamp_box(BBox(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0), w, h)
        if box is None or box.width < 2.0 or box.height < 2.0:
            continue
        out.append(Candidate(box=box, score=float(score), source=BoxSource.CURRENT,
                             frame=frame_ref))
    return out


def flow_scene(seed: int, velocity: tuple[float, float],
               width: int = 128, height: int = 96,
               rect_size: tuple[float, float] = (48.0, 40.0),
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two consecutive frames of a single textured rectangle moving by
    `velocity`, plus the rectangle's support mask on the first frame.
    Frames come back as float32 in [0, 1] after 8-bit quantization, the
    same signal the pipeline sees."""
    scene = SyntheticScene(
        width=width, height=height, length=2,
        rectangles=[RectSpec(size=rect_size, velocity=velocity, phase=0.5)],
    )
    data = generate_synthetic(scene, seed)
    f0 = data.frames[0].astype(np.float32) / 255.0
    f1 = data.frames[1].astype(np.float32) / 255.0
    support = data.gt_masks[0][0] > 0.5
    return f0, f1, support


def frame_features(frame: np.ndarray, patch_size: int, backbone: str) -> np.ndarray:
    """Per-patch summary features (mean, spread, horizontal and vertical
    gradient means) over a non-overlapping patch grid. The backbone name
    fixes a deterministic channel permutation so distinct names yield
    distinct but reproducible feature maps."""
    if frame.dtype == np.uint8:
        frame = frame.astype(np.float32) / 255.0
    frame = np.asarray(frame, dtype=np.float32)
    h, w = frame.shape
    hp, wp = h // patch_size, w // patch_size
    if hp < 1 or wp < 1:
        raise ValueError(f"frame {h}x{w} smaller than one {patch_size}px patch")
    crop = frame[: hp * patch_size, : wp * patch_size]
    tiles = crop.reshape(hp, patch_size, wp, patch_size).transpose(0, 2, 1, 3)
    mean = tiles.mean(axis=(2, 3))
    std = tiles.std(axis=(2, 3))
    gx = np.diff(crop, axis=1, prepend=crop[:, :1])
    gy = np.diff(crop, axis=0, prepend=crop[:1, :])
    gxm = gx.reshape(hp, patch_size, wp, patch_size).transpose(0, 2, 1, 3).mean(axis=(2, 3))
    gym = gy.reshape(hp, patch_size, wp, patch_size).transpose(0, 2, 1, 3).mean(axis=(2, 3))
    grid = np.stack([mean, std, gxm, gym], axis=-1).astype(np.float32)
    digest = hashlib.sha256(backbone.encode()).digest()
    order = np.argsort(np.frombuffer(digest[:4], dtype=np.uint8), kind="stable")
    return np.ascontiguousarray(grid[..., order])
