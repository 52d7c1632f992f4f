"""Desk-scale detection metrics: greedy IoU matching, interpolated AP,
average recall with detection caps, mask mIoU, and a motion-compensated
center-jitter score for label flicker.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BBox, iou
from .masks import mask_iou

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
LARGE_AREA = 96.0 * 96.0
DET_CAP = 100


@dataclass(frozen=True, slots=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]  # (pred index, gt index)
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class MetricReport:
    ap: float | None
    ap50: float | None
    ar: float | None
    ar_large: float | None
    miou: float | None
    jitter: float | None

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ar": self.ar,
            "ar_large": self.ar_large,
            "miou": self.miou,
            "jitter_px": self.jitter,
        }


def _score_order(scores: Sequence[float]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def match_detections(
    pred_boxes: Sequence[BBox],
    pred_scores: Sequence[float],
    gt_boxes: Sequence[BBox],
    iou_threshold: float,
) -> Matching:
    """Greedy one-to-one matching for one frame.

    Predictions are visited in descending score (ties by index); each takes
    the unmatched GT of highest IoU, provided that IoU reaches the
    threshold (GT index breaks exact ties).
    """
    if len(pred_boxes) != len(pred_scores):
        raise ValueError("boxes and scores must align")
    taken: set[int] = set()
    pairs: list[tuple[int, int]] = []
    unmatched_preds: list[int] = []
    for pi in _score_order(pred_scores):
        best_gt = -1
        best_iou = 0.0
        for gi, gbox in enumerate(gt_boxes):
            if gi in taken:
                continue
            ov = iou(pred_boxes[pi], gbox)
            if ov >= iou_threshold and ov > best_iou:
                best_iou = ov
                best_gt = gi
        if best_gt >= 0:
            taken.add(best_gt)
            pairs.append((pi, best_gt))
        else:
            unmatched_preds.append(pi)
    unmatched_gts = [gi for gi in range(len(gt_boxes)) if gi not in taken]
    return Matching(tuple(pairs), tuple(unmatched_preds), tuple(unmatched_gts))


def _cap_preds(
    boxes: Sequence[BBox], scores: Sequence[float], cap: int | None
) -> tuple[list[BBox], list[float], list[int]]:
    order = _score_order(scores)
    if cap is not None:
        order = order[:cap]
    return [boxes[i] for i in order], [scores[i] for i in order], order


def average_precision(
    preds_by_frame: Sequence[tuple[Sequence[BBox], Sequence[float]]],
    gts_by_frame: Sequence[Sequence[BBox]],
    iou_threshold: float,
    det_cap: int | None = DET_CAP,
) -> float | None:
    """Area under the 101-point interpolated precision-recall curve.

    Returns None (absent) when no ground truth exists anywhere.
    """
    if len(preds_by_frame) != len(gts_by_frame):
        raise ValueError("pred and gt frame counts differ")
    total_gt = sum(len(g) for g in gts_by_frame)
    if total_gt == 0:
        return None
    records: list[tuple[float, int, int, bool]] = []
    for f, ((boxes, scores), gts) in enumerate(zip(preds_by_frame, gts_by_frame)):
        capped_boxes, capped_scores, _ = _cap_preds(boxes, scores, det_cap)
        matching = match_detections(capped_boxes, capped_scores, gts, iou_threshold)
        matched = {pi for pi, _ in matching.pairs}
        for i, s in enumerate(capped_scores):
            records.append((s, f, i, i in matched))
    records.sort(key=lambda r: (-r[0], r[1], r[2]))
    tp = np.cumsum([1.0 if r[3] else 0.0 for r in records])
    fp = np.cumsum([0.0 if r[3] else 1.0 for r in records])
    if len(records) == 0:
        return 0.0
    recall = tp / total_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / 101.0


def ap_range(
    preds_by_frame,
    gts_by_frame,
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    det_cap: int | None = DET_CAP,
) -> float | None:
    vals = [average_precision(preds_by_frame, gts_by_frame, t, det_cap) for t in thresholds]
    if any(v is None for v in vals):
        return None
    return float(np.mean(vals))


def _area_filter(gts: Sequence[BBox], min_area: float) -> list[BBox]:
    return [g for g in gts if g.area > min_area]


def average_recall(
    preds_by_frame: Sequence[tuple[Sequence[BBox], Sequence[float]]],
    gts_by_frame: Sequence[Sequence[BBox]],
    det_cap: int | None = DET_CAP,
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    large_only: bool = False,
    large_area: float = LARGE_AREA,
) -> float | None:
    """Mean over IoU thresholds of (matched GTs / total GTs).

    Predictions truncate to the top det_cap by score per frame; large_only
    restricts ground truth to boxes of area > large_area. None when no
    (remaining) ground truth exists.
    """
    if len(preds_by_frame) != len(gts_by_frame):
        raise ValueError("pred and gt frame counts differ")
    gt_sets = [
        _area_filter(g, large_area) if large_only else list(g) for g in gts_by_frame
    ]
    total_gt = sum(len(g) for g in gt_sets)
    if total_gt == 0:
        return None
    recalls = []
    for thr in thresholds:
        matched = 0
        for (boxes, scores), gts in zip(preds_by_frame, gt_sets):
            capped_boxes, capped_scores, _ = _cap_preds(boxes, scores, det_cap)
            matching = match_detections(capped_boxes, capped_scores, gts, thr)
            matched += len(matching.pairs)
        recalls.append(matched / total_gt)
    return float(np.mean(recalls))


def sweep_topk(
    preds_by_frame,
    gts_by_frame,
    ks: Sequence[int] = (30, 100, 120, 150, 200),
    thresholds: Sequence[float] = COCO_THRESHOLDS,
) -> list[tuple[int, float]]:
    """(k, AR) pairs with the per-frame detection cap swept over k."""
    out = []
    for k in ks:
        ar = average_recall(preds_by_frame, gts_by_frame, det_cap=k, thresholds=thresholds)
        out.append((int(k), float(ar) if ar is not None else 0.0))
    return out


def mean_mask_iou(
    preds_by_frame: Sequence[tuple[Sequence[BBox], Sequence[float], Sequence[np.ndarray | None]]],
    gts_by_frame: Sequence[tuple[Sequence[BBox], Sequence[np.ndarray]]],
    iou_threshold: float = 0.5,
    det_cap: int | None = DET_CAP,
) -> float | None:
    """Mean mask IoU over GTs; an unmatched GT counts 0, masks binarize at 0.5.

    Returns None when no GT masks exist or no prediction carries a mask.
    """
    total_gt = sum(len(g[0]) for g in gts_by_frame)
    any_pred_mask = any(m is not None for p in preds_by_frame for m in p[2])
    if total_gt == 0 or not any_pred_mask:
        return None
    acc = 0.0
    for (boxes, scores, masks), (gt_boxes, gt_masks) in zip(preds_by_frame, gts_by_frame):
        capped_boxes, capped_scores, order = _cap_preds(boxes, scores, det_cap)
        matching = match_detections(capped_boxes, capped_scores, gt_boxes, iou_threshold)
        for pi, gi in matching.pairs:
            pmask = masks[order[pi]]
            if pmask is None:
                continue
            acc += mask_iou(pmask, gt_masks[gi])
    return acc / total_gt


def center_jitter(track: Sequence[BBox], gt_track: Sequence[BBox]) -> float:
    """Mean motion-compensated center deviation between consecutive frames."""
    if len(track) != len(gt_track):
        raise ValueError("track and GT trajectory must align")
    if len(track) < 2:
        raise ValueError("track shorter than 2 frames")
    acc = 0.0
    for t in range(len(track) - 1):
        cx1, cy1 = track[t].center
        cx2, cy2 = track[t + 1].center
        gx1, gy1 = gt_track[t].center
        gx2, gy2 = gt_track[t + 1].center
        dx = (cx2 - cx1) - (gx2 - gx1)
        dy = (cy2 - cy1) - (gy2 - gy1)
        acc += float(np.hypot(dx, dy))
    return acc / (len(track) - 1)


def instance_track(
    pred_boxes_by_frame: Sequence[Sequence[BBox]],
    gt_boxes: Sequence[BBox],
    min_iou: float = 0.1,
) -> tuple[list[BBox], list[BBox]]:
    """Bind one label per frame to a GT trajectory for jitter measurement.

    Per frame the highest-IoU label against the GT box is taken when its IoU
    exceeds min_iou; a frame with no admissible label holds the previous
    bound box (a vanished label reads as flicker, not as a free skip).
    Leading frames before the first bind are dropped. Returns the bound
    track and the GT boxes of the surviving frames.
    """
    if len(pred_boxes_by_frame) != len(gt_boxes):
        raise ValueError("frame counts differ")
    track: list[BBox] = []
    gts: list[BBox] = []
    last: BBox | None = None
    for preds, gt in zip(pred_boxes_by_frame, gt_boxes):
        best: BBox | None = None
        best_iou = min_iou
        for box in preds:
            ov = iou(box, gt)
            if ov > best_iou:
                best_iou = ov
                best = box
        if best is not None:
            last = best
        if last is not None:
            track.append(last)
            gts.append(gt)
    return track, gts
