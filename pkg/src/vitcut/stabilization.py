"""Motion-guided temporal stabilization of per-frame box candidates.

For a target frame t, candidates from the surrounding window are warped into
t along their box-mean flow, fused into consensus proposals by greedy IoU
grouping, and used to retain well-supported current boxes and add fused
boxes where the current frame missed an object. Neighbors always contribute
their original (unstabilized) candidates, so no smoothing chains across
frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .flow import FlowField, mean_flow_in_box
from .geometry import BBox, BoxSource, Candidate, FrameRef, clamp_box, iou


class MissingFlowError(LookupError):
    """A required reference->target flow field was not provided."""


@dataclass(frozen=True, slots=True)
class StabilizationParams:
    window_radius: int = 3
    iou_group: float = 0.7
    iou_keep: float = 0.6
    iou_add: float = 0.7
    min_group_size: int = 3
    fusion: str = "enclosing"  # or "mean"

    def validate(self) -> "StabilizationParams":
        if self.window_radius < 1:
            raise ValueError(f"window_radius {self.window_radius} < 1")
        for name in ("iou_group", "iou_keep", "iou_add"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} {v} outside (0, 1]")
        if self.min_group_size < 1:
            raise ValueError(f"min_group_size {self.min_group_size} < 1")
        if self.fusion not in ("enclosing", "mean"):
            raise ValueError(f"unknown fusion rule {self.fusion!r}")
        return self


def align_references(
    target: int,
    frame: FrameRef,
    candidates_by_frame: Sequence[Sequence[Candidate]],
    flows: Mapping[tuple[int, int], FlowField],
    params: StabilizationParams | None = None,
) -> list[Candidate]:
    """Warp window-neighbor candidates into the target frame.

    Each reference box is translated by its mean flow (reference -> target)
    and clamped to the target frame; boxes that end up fully outside, or so
    thin they cover no flow pixels, are dropped. A missing flow field for an
    in-window frame pair is a hard error.
    """
    params = (params or StabilizationParams()).validate()
    if not (0 <= target < len(candidates_by_frame)):
        raise ValueError(f"target {target} outside sequence of {len(candidates_by_frame)} frames")
    warped: list[Candidate] = []
    lo = max(0, target - params.window_radius)
    hi = min(len(candidates_by_frame) - 1, target + params.window_radius)
    for ref in range(lo, hi + 1):
        if ref == target:
            continue
        if not candidates_by_frame[ref]:
            continue
        key = (ref, target)
        if key not in flows:
            raise MissingFlowError(f"no flow field for frame pair {key}")
        field = flows[key]
        for cand in candidates_by_frame[ref]:
            try:
                mu, mv = mean_flow_in_box(field, cand.box)
            except ValueError:
                continue  # degenerate sliver, no pixel support
            moved = clamp_box(cand.box.translate(mu, mv), frame.width, frame.height)
            if moved is None:
                continue
            warped.append(
                Candidate(box=moved, score=cand.score, source=BoxSource.WARPED_REFERENCE, frame=frame)
            )
    return warped


def _fused_box(members: list[Candidate], rule: str) -> BBox:
    if rule == "enclosing":
        return BBox(
            min(c.box.x1 for c in members),
            min(c.box.y1 for c in members),
            max(c.box.x2 for c in members),
            max(c.box.y2 for c in members),
        )
    coords = np.array([[c.box.x1, c.box.y1, c.box.x2, c.box.y2] for c in members], dtype=np.float64)
    x1, y1, x2, y2 = coords.mean(axis=0)
    return BBox(float(x1), float(y1), float(x2), float(y2))


def fuse_references(
    warped: Sequence[Candidate],
    params: StabilizationParams | None = None,
) -> list[Candidate]:
    """Greedy IoU grouping of warped references into fused proposals.

    The highest-scoring unused box pivots a group of every unused box whose
    IoU with it reaches iou_group; groups smaller than min_group_size are
    discarded. A surviving group fuses to its enclosing box (or the
    coordinate mean under the "mean" rule) with the mean member score.
    """
    params = (params or StabilizationParams()).validate()
    order = sorted(range(len(warped)), key=lambda i: (-warped[i].score, i))
    used = [False] * len(warped)
    fused: list[Candidate] = []
    for pivot in order:
        if used[pivot]:
            continue
        used[pivot] = True
        members = [warped[pivot]]
        for j in order:
            if used[j]:
                continue
            if iou(warped[pivot].box, warped[j].box) >= params.iou_group:
                used[j] = True
                members.append(warped[j])
        if len(members) < params.min_group_size:
            continue
        score = float(np.mean([m.score for m in members]))
        fused.append(
            Candidate(
                box=_fused_box(members, params.fusion),
                score=score,
                source=BoxSource.FUSED,
                frame=warped[pivot].frame,
            )
        )
    return fused


def refine_current(
    current: Sequence[Candidate],
    fused: Sequence[Candidate],
    params: StabilizationParams | None = None,
) -> list[Candidate]:
    """Keep supported current boxes, add fused boxes they do not cover.

    A current box is kept when some fused box overlaps it at iou_keep or
    better; a fused box is added when its best IoU against the *kept* set
    stays below iou_add. With no fused proposals the current set passes
    through unchanged. Output order: kept boxes in their original order,
    then added fused boxes by descending score.
    """
    params = (params or StabilizationParams()).validate()
    if not fused:
        return list(current)
    kept = [b for b in current if any(iou(b.box, f.box) >= params.iou_keep for f in fused)]
    added = [
        f
        for f in fused
        if all(iou(b.box, f.box) < params.iou_add for b in kept)
    ]
    added_order = sorted(range(len(added)), key=lambda i: (-added[i].score, i))
    return kept + [added[i] for i in added_order]


def stabilize_frame(
    target: int,
    frame: FrameRef,
    candidates_by_frame: Sequence[Sequence[Candidate]],
    flows: Mapping[tuple[int, int], FlowField],
    params: StabilizationParams | None = None,
) -> list[Candidate]:
    params = (params or StabilizationParams()).validate()
    warped = align_references(target, frame, candidates_by_frame, flows, params)
    fused = fuse_references(warped, params)
    return refine_current(candidates_by_frame[target], fused, params)


def stabilize_sequence(
    frames: Sequence[FrameRef],
    candidates_by_frame: Sequence[Sequence[Candidate]],
    flows: Mapping[tuple[int, int], FlowField],
    params: StabilizationParams | None = None,
) -> list[list[Candidate]]:
    """Stabilize every frame against its original neighbors.

    Window truncates at the sequence boundaries; a single-frame sequence is
    returned unchanged.
    """
    params = (params or StabilizationParams()).validate()
    if len(frames) != len(candidates_by_frame):
        raise ValueError("frames and candidate lists must align")
    return [
        stabilize_frame(t, frames[t], candidates_by_frame, flows, params)
        for t in range(len(frames))
    ]
