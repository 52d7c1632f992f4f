"""Core box geometry: boxes, candidates, IoU, NMS, score filtering.

Boxes are continuous half-open regions [x1, x2) x [y1, y2) in pixel
coordinates; area is (x2 - x1) * (y2 - y1) with no +1 pixel convention.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace


class BoxSource(str, enum.Enum):
    """Provenance tag for a candidate box."""

    CURRENT = "current"
    WARPED_REFERENCE = "warped-reference"
    FUSED = "fused"
    DETECTOR = "detector"
    GROUND_TRUTH = "gt"


@dataclass(frozen=True, slots=True)
class BBox:
    """Axis-aligned box with x1 < x2 and y1 < y2 (strict)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True, slots=True)
class FrameRef:
    """Identifies one frame of one video."""

    video: str
    index: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"negative frame index {self.index}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bad frame dims {self.width}x{self.height}")


@dataclass(frozen=True, slots=True)
class Candidate:
    """A scored box proposal attached to a frame."""

    box: BBox
    score: float
    source: BoxSource
    frame: FrameRef

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    def with_box(self, box: BBox, source: BoxSource | None = None) -> "Candidate":
        return replace(self, box=box, source=self.source if source is None else source)


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def clamp_box(box: BBox, width: int, height: int) -> BBox | None:
    """Clip a box to the frame extent [0, W] x [0, H].

    Returns None when the clipped region has zero area (box fully outside
    the frame or touching it edge-on); callers drop such boxes.
    """
    x1 = min(max(box.x1, 0.0), float(width))
    y1 = min(max(box.y1, 0.0), float(height))
    x2 = min(max(box.x2, 0.0), float(width))
    y2 = min(max(box.y2, 0.0), float(height))
    if x1 >= x2 or y1 >= y2:
        return None
    return BBox(x1, y1, x2, y2)


def _stable_desc_by_score(candidates: list[Candidate]) -> list[int]:
    # ties keep insertion order: sort on (-score, index)
    return sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))


def nms(candidates: list[Candidate], iou_threshold: float) -> list[Candidate]:
    """Greedy non-maximum suppression.

    Candidates are visited in descending score (ties by insertion order);
    a candidate is dropped when its IoU with any already-kept candidate is
    >= iou_threshold, so every surviving pair has IoU strictly below it.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1]")
    kept: list[Candidate] = []
    for i in _stable_desc_by_score(candidates):
        cand = candidates[i]
        if all(iou(cand.box, other.box) < iou_threshold for other in kept):
            kept.append(cand)
    return kept


def top_k(candidates: list[Candidate], k: int, min_score: float = 0.0) -> list[Candidate]:
    """Keep candidates with score >= min_score, descending score, first k.

    Equal scores keep their insertion order, so the result is deterministic
    for any input ordering.
    """
    if k < 0:
        raise ValueError(f"negative k {k}")
    order = _stable_desc_by_score(candidates)
    picked = [candidates[i] for i in order if candidates[i].score >= min_score]
    return picked[:k]
