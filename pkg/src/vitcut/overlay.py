"""Box and mask overlays on grayscale frames.

Palette (RGB), keyed by the label's provenance tag:
    current            (220,  60,  60)  red
    warped-reference   (230, 200,  60)  yellow
    fused              ( 80, 200, 120)  green
    detector           ( 90, 140, 230)  blue
    gt                 (245, 245, 245)  white

Boxes are drawn as one-pixel rectangle outlines at their integer pixel
coordinates, clamped to the frame. Masks, when present, contribute their
one-pixel inner contour in the same color. Frames with an empty label
list are copied through unmodified.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import BoxSource
from .labels import FrameLabels, PseudoLabelSet
from .masks import binarize
from .tensorio import read_pgm, read_tensor, write_ppm

PALETTE: dict[BoxSource, tuple[int, int, int]] = {
    BoxSource.CURRENT: (220, 60, 60),
    BoxSource.WARPED_REFERENCE: (230, 200, 60),
    BoxSource.FUSED: (80, 200, 120),
    BoxSource.DETECTOR: (90, 140, 230),
    BoxSource.GROUND_TRUTH: (245, 245, 245),
}


def draw_box_outline(image: np.ndarray, box_xyxy: tuple[float, float, float, float],
                     color: tuple[int, int, int]) -> None:
    """Paint a 1px rectangle outline in-place on an RGB uint8 image."""
    h, w = image.shape[:2]
    x1, y1, x2, y2 = box_xyxy
    c1 = min(max(int(np.floor(x1)), 0), w - 1)
    r1 = min(max(int(np.floor(y1)), 0), h - 1)
    c2 = min(max(int(np.ceil(x2)) - 1, 0), w - 1)
    r2 = min(max(int(np.ceil(y2)) - 1, 0), h - 1)
    col = np.asarray(color, dtype=np.uint8)
    image[r1, c1 : c2 + 1] = col
    image[r2, c1 : c2 + 1] = col
    image[r1 : r2 + 1, c1] = col
    image[r1 : r2 + 1, c2] = col


def mask_contour(mask: np.ndarray) -> np.ndarray:
    """Boolean contour: foreground pixels with a 4-neighbor in background."""
    fg = binarize(mask).astype(bool)
    interior = fg.copy()
    interior[1:, :] &= fg[:-1, :]
    interior[:-1, :] &= fg[1:, :]
    interior[:, 1:] &= fg[:, :-1]
    interior[:, :-1] &= fg[:, 1:]
    # borders touch the outside, so border foreground is contour
    interior[0, :] = False
    interior[-1, :] = False
    interior[:, 0] = False
    interior[:, -1] = False
    return fg & ~interior


def render_frame_overlay(gray: np.ndarray, frame: FrameLabels,
                         mask_root: Path | None = None) -> np.ndarray:
    rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.uint8)
    for label in frame.labels:
        color = PALETTE[label.source]
        if label.mask_path is not None and mask_root is not None:
            mask = read_tensor(mask_root / label.mask_path).astype(np.float32)
            if mask.ndim == 2 and mask.shape == gray.shape:
                rgb[mask_contour(mask)] = np.asarray(color, dtype=np.uint8)
        draw_box_outline(rgb, label.box.as_tuple(), color)
    return rgb


def emit_overlays(labels: PseudoLabelSet, labels_path: Path, frames_root: Path,
                  out_dir: Path) -> list[Path]:
    """Write one overlay image per labeled frame.

    Frames are read from frames_root/<video>/frames/<index>.pgm. Labeled
    frames come out as color PPM; frames whose label list is empty are
    copied through as untouched PGM. Returns the written paths.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for video in labels.videos:
        vdir = out_dir / video.id
        vdir.mkdir(parents=True, exist_ok=True)
        for frame in video.frames:
            src = frames_root / video.id / "frames" / f"{frame.index:06d}.pgm"
            if not src.is_file():
                raise FileNotFoundError(f"missing frame image {src}")
            if not frame.labels:
                dst = vdir / f"{frame.index:06d}.pgm"
                dst.write_bytes(src.read_bytes())
            else:
                gray = read_pgm(src)
                dst = vdir / f"{frame.index:06d}.ppm"
                write_ppm(dst, render_frame_overlay(gray, frame, labels_path.parent))
            written.append(dst)
    return written
