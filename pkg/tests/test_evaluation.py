import numpy as np
import pytest

from vitcut.evaluation import (
    COCO_THRESHOLDS,
    average_precision,
    average_recall,
    ap_range,
    center_jitter,
    instance_track,
    match_detections,
    mean_mask_iou,
    sweep_topk,
)
from vitcut.geometry import BBox, iou


def box(x, y, w=10.0, h=10.0):
    return BBox(x, y, x + w, y + h)


def random_boxes(rng, n, span=60.0):
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, span, 2)
        w, h = rng.uniform(4, 20, 2)
        out.append(BBox(x, y, x + w, y + h))
    return out


# ---------------------------------------------------------------- matching


def test_match_single_perfect_pred():
    m = match_detections([box(0, 0)], [0.9], [box(0, 0)], 0.5)
    assert m.pairs == ((0, 0),)
    assert m.unmatched_preds == ()
    assert m.unmatched_gts == ()


def test_match_two_preds_one_gt():
    m = match_detections([box(0, 0), box(1, 0)], [0.9, 0.8], [box(0, 0)], 0.5)
    assert m.pairs == ((0, 0),)
    assert m.unmatched_preds == (1,)


def _greedy_oracle(pred_boxes, pred_scores, gt_boxes, thr):
    order = sorted(range(len(pred_scores)), key=lambda i: (-pred_scores[i], i))
    taken = set()
    pairs = []
    for pi in order:
        best, best_iou = -1, 0.0
        for gi in range(len(gt_boxes)):
            if gi in taken:
                continue
            ov = iou(pred_boxes[pi], gt_boxes[gi])
            if ov >= thr and ov > best_iou:
                best, best_iou = gi, ov
        if best >= 0:
            taken.add(best)
            pairs.append((pi, best))
    return set(pairs)


def test_match_random_against_rule_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        preds = random_boxes(rng, 10)
        scores = rng.uniform(0, 1, 10).tolist()
        gts = random_boxes(rng, 10)
        m = match_detections(preds, scores, gts, 0.3)
        assert set(m.pairs) == _greedy_oracle(preds, scores, gts, 0.3)


# ---------------------------------------------------------------- AP


def test_ap_perfect_detections():
    gts = [box(0, 0), box(30, 0)]
    preds = ([box(0, 0), box(30, 0)], [0.9, 0.8])
    assert average_precision([preds], [gts], 0.5) == 1.0
    assert ap_range([preds], [gts]) == 1.0


def test_ap_no_predictions():
    assert average_precision([([], [])], [[box(0, 0)]], 0.5) == 0.0


def test_ap_absent_without_gt():
    assert average_precision([([box(0, 0)], [0.9])], [[]], 0.5) is None
    assert ap_range([([box(0, 0)], [0.9])], [[]]) is None


def test_ap_hand_computed_five_dets_three_gts():
    g1, g2, g3 = box(0, 0), box(20, 0), box(40, 0)
    preds = (
        [g1, box(100, 100), g2, box(0.5, 0), g3],
        [0.95, 0.90, 0.80, 0.70, 0.60],
    )
    # det outcomes by score: TP FP TP FP TP -> interpolated precision
    # r <= 1/3: 1; 1/3 < r <= 2/3: 2/3; r > 2/3: 3/5
    want = (34 * 1.0 + 33 * (2.0 / 3.0) + 34 * 0.6) / 101.0
    got = average_precision([preds], [[g1, g2, g3]], 0.5)
    assert got == pytest.approx(want, rel=1e-12)


def test_ap_duplicates_never_increase():
    rng = np.random.default_rng(2)
    for _ in range(10):
        frames_p = []
        frames_g = []
        for _ in range(3):
            gts = random_boxes(rng, 4)
            preds = random_boxes(rng, 6)
            scores = rng.uniform(0, 1, 6).tolist()
            frames_p.append((preds, scores))
            frames_g.append(gts)
        base = average_precision(frames_p, frames_g, 0.5)
        doubled = [(p + p, s + s) for p, s in frames_p]
        dup = average_precision(doubled, frames_g, 0.5)
        assert dup <= base + 1e-12


# ---------------------------------------------------------------- AR


def test_ar_perfect():
    gts = [box(0, 0), box(30, 0)]
    preds = ([box(0, 0), box(30, 0)], [0.9, 0.8])
    assert average_recall([preds], [gts]) == 1.0


def test_ar_empty_preds():
    assert average_recall([([], [])], [[box(0, 0)]]) == 0.0


def test_ar_absent_without_gt():
    assert average_recall([([], [])], [[]]) is None


def test_ar_monotone_in_cap():
    rng = np.random.default_rng(3)
    frames_p = []
    frames_g = []
    for _ in range(4):
        gts = random_boxes(rng, 5)
        noisy = []
        for g in gts:
            noisy.append(BBox(g.x1 + rng.uniform(-3, 3), g.y1 + rng.uniform(-3, 3), g.x2, g.y2))
        preds = noisy + random_boxes(rng, 12)
        scores = rng.uniform(0, 1, len(preds)).tolist()
        frames_p.append((preds, scores))
        frames_g.append(gts)
    ks = [1, 2, 4, 8, 12, 17]
    ars = [average_recall(frames_p, frames_g, det_cap=k) for k in ks]
    for a, b in zip(ars, ars[1:]):
        assert b >= a - 1e-12
    sweep = sweep_topk(frames_p, frames_g, ks=ks)
    assert [k for k, _ in sweep] == ks
    assert [ar for _, ar in sweep] == pytest.approx(ars)


def test_ar_large_only():
    small = box(0, 0, 10, 10)
    large = box(50, 50, 120, 120)
    preds = ([small, large], [0.9, 0.8])
    ar_l = average_recall([preds], [[small, large]], large_only=True)
    assert ar_l == 1.0
    miss = ([small], [0.9])
    assert average_recall([miss], [[small, large]], large_only=True) == 0.0
    assert average_recall([preds], [[small]], large_only=True) is None


# ---------------------------------------------------------------- mIoU


def square_mask(c0, c1, h=20, w=20):
    m = np.zeros((h, w), dtype=np.float32)
    m[0:10, c0:c1] = 1.0
    return m


def test_miou_identical_masks():
    m = square_mask(0, 10)
    preds = [([box(0, 0)], [0.9], [m])]
    gts = [([box(0, 0)], [m])]
    assert mean_mask_iou(preds, gts) == 1.0


def test_miou_disjoint_masks():
    preds = [([box(0, 0)], [0.9], [square_mask(0, 10)])]
    gts = [([box(0, 0)], [square_mask(10, 20)])]
    assert mean_mask_iou(preds, gts) == 0.0


def test_miou_half_overlap_is_one_third():
    preds = [([box(0, 0)], [0.9], [square_mask(0, 10)])]
    gts = [([box(0, 0)], [square_mask(5, 15)])]
    assert mean_mask_iou(preds, gts) == pytest.approx(1.0 / 3.0, rel=1e-12)


def test_miou_unmatched_gt_counts_zero():
    m = square_mask(0, 10)
    preds = [([box(0, 0)], [0.9], [m])]
    gts = [([box(0, 0), box(100, 100)], [m, m])]
    assert mean_mask_iou(preds, gts) == pytest.approx(0.5)


def test_miou_absent_cases():
    assert mean_mask_iou([([box(0, 0)], [0.9], [None])], [([box(0, 0)], [square_mask(0, 10)])]) is None
    assert mean_mask_iou([([], [], [])], [([], [])]) is None


# ---------------------------------------------------------------- jitter


def test_jitter_zero_on_gt_trajectory():
    gt = [box(2.0 * t, 1.0 * t) for t in range(6)]
    assert center_jitter(list(gt), gt) == 0.0


def test_jitter_alternating_offset():
    gt = [box(0, 0)] * 6
    track = [box(2.0 if t % 2 == 0 else -2.0, 0.0) for t in range(6)]
    assert center_jitter(track, gt) == pytest.approx(4.0, rel=1e-12)


def test_jitter_constant_offset_is_zero():
    gt = [box(3.0 * t, 0) for t in range(5)]
    track = [box(3.0 * t + 1.5, 0.75) for t in range(5)]
    assert center_jitter(track, gt) == 0.0


def test_jitter_translation_invariant():
    rng = np.random.default_rng(4)
    gt = [box(3.0 * t, 2.0 * t) for t in range(8)]
    track = [box(3.0 * t + rng.uniform(-2, 2), 2.0 * t + rng.uniform(-2, 2)) for t in range(8)]
    moved = [b.translate(7.25, -3.5) for b in track]
    assert center_jitter(moved, gt) == pytest.approx(center_jitter(track, gt), abs=1e-12)


def test_jitter_input_validation():
    with pytest.raises(ValueError):
        center_jitter([box(0, 0)], [box(0, 0)])
    with pytest.raises(ValueError):
        center_jitter([box(0, 0)] * 3, [box(0, 0)] * 2)


# ---------------------------------------------------------------- tracks


def test_instance_track_binds_and_holds():
    gt = [box(2.0 * t, 0) for t in range(4)]
    preds = [
        [box(0.5, 0)],
        [box(2.5, 0)],
        [],  # dropout: previous bound box holds
        [box(6.5, 0)],
    ]
    track, gts = instance_track(preds, gt)
    assert len(track) == len(gts) == 4
    assert track[2] == track[1]


def test_instance_track_drops_leading_unmatched():
    gt = [box(0, 0)] * 4
    preds = [[], [box(0.5, 0)], [box(-0.5, 0)], [box(0.25, 0)]]
    track, gts = instance_track(preds, gt)
    assert len(track) == 3
    assert gts == [box(0, 0)] * 3


def test_instance_track_requires_min_overlap():
    gt = [box(0, 0)] * 3
    preds = [[box(100, 100)], [box(0, 0)], [box(100, 100)]]
    track, _ = instance_track(preds, gt, min_iou=0.1)
    # the far boxes never bind; frame 1 binds and frame 2 holds it
    assert len(track) == 2
    assert track[0] == box(0, 0) and track[1] == box(0, 0)
