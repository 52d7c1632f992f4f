"""Flow-gated baseline labeling: mask warping, temporal IoU gating of
transient regions, and removal of static (background) regions by flow
magnitude streaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .flow import FlowField, mean_flow_magnitude_in_mask
from .geometry import BBox, iou
from .masks import bbox_of_mask, binarize


@dataclass(frozen=True, slots=True)
class VideocutParams:
    gate_iou: float = 0.3
    mag_threshold: float = 0.5
    streak_needed: int = 3
    assoc_iou: float = 0.5

    def validate(self) -> "VideocutParams":
        if not (0.0 < self.gate_iou <= 1.0):
            raise ValueError(f"gate_iou {self.gate_iou} outside (0, 1]")
        if self.mag_threshold < 0.0:
            raise ValueError(f"mag_threshold {self.mag_threshold} < 0")
        if self.streak_needed < 1:
            raise ValueError(f"streak_needed {self.streak_needed} < 1")
        if not (0.0 < self.assoc_iou <= 1.0):
            raise ValueError(f"assoc_iou {self.assoc_iou} outside (0, 1]")
        return self


@dataclass(slots=True)
class TrackedRegion:
    """A mask track over a contiguous frame range (running structure)."""

    region_id: int
    masks: dict[int, np.ndarray] = field(default_factory=dict)
    boxes: dict[int, BBox] = field(default_factory=dict)
    source_index: dict[int, int] = field(default_factory=dict)  # input mask index per frame
    is_bg: dict[int, bool] = field(default_factory=dict)
    bg_streak: int = 0

    @property
    def frames(self) -> list[int]:
        return sorted(self.masks)


def warp_mask(mask: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward nearest-neighbor warp of a binary mask.

    Output pixel q is foreground iff the mask at round(q - (u(q), v(q))) is
    foreground; samples falling off the grid are background.
    """
    if mask.shape != flow.shape:
        raise ValueError(f"mask {mask.shape} does not match flow {flow.shape}")
    h, w = mask.shape
    ys, xs = np.mgrid[0:h, 0:w]
    src_x = np.rint(xs - flow.u.astype(np.float64)).astype(np.int64)
    src_y = np.rint(ys - flow.v.astype(np.float64)).astype(np.int64)
    inside = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    fg = binarize(mask)
    out = np.zeros((h, w), dtype=np.float32)
    out[inside] = fg[src_y[inside], src_x[inside]].astype(np.float32)
    return out


def temporal_gate(warped_box: BBox, current_box: BBox, iou_threshold: float) -> bool:
    """Keep (True) iff the motion-compensated box overlaps at the threshold."""
    return iou(warped_box, current_box) >= iou_threshold


def associate_regions(
    per_frame_masks: Sequence[Sequence[np.ndarray]],
    assoc_iou: float = 0.5,
) -> list[TrackedRegion]:
    """Greedy frame-to-frame association by box IoU; no gap bridging.

    For each frame, (region active in the previous frame, mask) pairs are
    taken in descending IoU order (ties by region then mask index) while the
    IoU reaches the threshold; leftover masks start new regions. A region
    absent in the previous frame is never continued.
    """
    regions: list[TrackedRegion] = []
    next_id = 0
    prev_active: list[TrackedRegion] = []
    for t, masks in enumerate(per_frame_masks):
        boxes = [bbox_of_mask(m) for m in masks]
        pairs: list[tuple[float, int, int]] = []
        for ri, region in enumerate(prev_active):
            rbox = region.boxes[t - 1]
            for mi, mbox in enumerate(boxes):
                if mbox is None:
                    continue
                ov = iou(rbox, mbox)
                if ov >= assoc_iou:
                    pairs.append((ov, ri, mi))
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
        taken_region: set[int] = set()
        taken_mask: set[int] = set()
        active: list[TrackedRegion] = []
        for ov, ri, mi in pairs:
            if ri in taken_region or mi in taken_mask:
                continue
            taken_region.add(ri)
            taken_mask.add(mi)
            region = prev_active[ri]
            region.masks[t] = masks[mi]
            region.boxes[t] = boxes[mi]  # type: ignore[assignment]
            region.source_index[t] = mi
            active.append(region)
        for mi, mask in enumerate(masks):
            if mi in taken_mask or boxes[mi] is None:
                continue
            region = TrackedRegion(region_id=next_id)
            next_id += 1
            region.masks[t] = mask
            region.boxes[t] = boxes[mi]  # type: ignore[assignment]
            region.source_index[t] = mi
            regions.append(region)
            active.append(region)
        active.sort(key=lambda r: r.region_id)
        prev_active = active
    return regions


def background_scan(
    regions: Sequence[TrackedRegion],
    flows: Mapping[int, FlowField],
    mag_threshold: float = 0.5,
    streak_needed: int = 3,
) -> list[TrackedRegion]:
    """Flag static frames and delete regions once a full streak completes.

    A frame is flagged is-bg when the mean flow magnitude inside the mask is
    below mag_threshold. When the running streak of flagged frames reaches
    streak_needed at frame f, the region's masks are removed from f onward
    (forward-only removal).
    """
    out: list[TrackedRegion] = []
    for region in regions:
        streak = 0
        cut: int | None = None
        for t in region.frames:
            if t not in flows:
                raise KeyError(f"no flow provided for frame {t}")
            mag = mean_flow_magnitude_in_mask(flows[t], region.masks[t])
            flagged = mag < mag_threshold
            region.is_bg[t] = flagged
            streak = streak + 1 if flagged else 0
            region.bg_streak = streak
            if streak >= streak_needed:
                cut = t
                break
        if cut is not None:
            for t in [f for f in region.frames if f >= cut]:
                del region.masks[t]
                del region.boxes[t]
                del region.source_index[t]
        if region.masks:
            out.append(region)
    return out


def videocut_sequence(
    per_frame_masks: Sequence[Sequence[np.ndarray]],
    flows: Mapping[tuple[int, int], FlowField],
    params: VideocutParams | None = None,
) -> list[TrackedRegion]:
    """Associate, gate, and background-filter per-frame masks.

    Steps: (1) greedy association into regions; (2) for each consecutive
    present pair (t-1, t), warp the region's t-1 mask along flow (t-1 -> t)
    and drop frame t when the boxes fail the gate, splitting the region at
    the dropped frame (a re-appearing object is a new region); (3) flag and
    remove static regions by flow-magnitude streaks, where the magnitude at
    frame t uses flow (t, t+1), falling back to (t, t-1) on the last frame.
    """
    params = (params or VideocutParams()).validate()
    n_frames = len(per_frame_masks)
    regions = associate_regions(per_frame_masks, params.assoc_iou)

    gated: list[TrackedRegion] = []
    next_id = 0
    for region in regions:
        current: TrackedRegion | None = None
        prev_frame: int | None = None
        for t in region.frames:
            keep = True
            if current is not None and prev_frame == t - 1:
                key = (t - 1, t)
                if key not in flows:
                    raise KeyError(f"no flow field for frame pair {key}")
                warped = warp_mask(current.masks[t - 1], flows[key])
                wbox = bbox_of_mask(warped)
                keep = wbox is not None and temporal_gate(
                    wbox, region.boxes[t], params.gate_iou
                )
            if keep:
                if current is None:
                    current = TrackedRegion(region_id=next_id)
                    next_id += 1
                    gated.append(current)
                current.masks[t] = region.masks[t]
                current.boxes[t] = region.boxes[t]
                current.source_index[t] = region.source_index[t]
                prev_frame = t
            else:
                current = None  # split: later frames start a new region
                prev_frame = None

    mag_flows: dict[int, FlowField] = {}
    for t in range(n_frames):
        if (t, t + 1) in flows:
            mag_flows[t] = flows[(t, t + 1)]
        elif (t, t - 1) in flows:
            mag_flows[t] = flows[(t, t - 1)]
    return background_scan(gated, mag_flows, params.mag_threshold, params.streak_needed)
