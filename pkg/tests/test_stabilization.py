import numpy as np
import pytest

from vitcut.flow import FlowField
from vitcut.geometry import BBox, BoxSource, Candidate, FrameRef, iou
from vitcut.stabilization import (
    MissingFlowError,
    StabilizationParams,
    align_references,
    fuse_references,
    refine_current,
    stabilize_frame,
    stabilize_sequence,
)

W, H = 60, 40


def frame(t):
    return FrameRef("v", t, W, H)


def cand(t, box, score=0.8, source=BoxSource.CURRENT):
    return Candidate(box=BBox(*box), score=score, source=source, frame=frame(t))


def const_flow(u, v):
    return FlowField(
        u=np.full((H, W), u, dtype=np.float32),
        v=np.full((H, W), v, dtype=np.float32),
    )


def zero_flows(n, radius=3):
    return {
        (r, t): const_flow(0.0, 0.0)
        for t in range(n)
        for r in range(max(0, t - radius), min(n, t + radius + 1))
        if r != t
    }


# ---------------------------------------------------------------- align


def test_align_static_scene_identity():
    seq = [[cand(t, (10, 10, 20, 20))] for t in range(7)]
    warped = align_references(3, frame(3), seq, zero_flows(7))
    assert len(warped) == 6
    for w in warped:
        assert w.box.as_tuple() == (10.0, 10.0, 20.0, 20.0)
        assert w.source is BoxSource.WARPED_REFERENCE


def test_align_constant_velocity_lands_on_target():
    # box moves +2 px/frame along x; reference at t-3 must translate by +6
    seq = [[cand(t, (10 + 2 * t, 10, 20 + 2 * t, 20))] for t in range(7)]
    flows = {
        (r, 3): const_flow(2.0 * (3 - r), 0.0) for r in range(7) if r != 3
    }
    warped = align_references(3, frame(3), seq, flows)
    assert len(warped) == 6
    for w in warped:
        assert w.box.as_tuple() == (16.0, 10.0, 26.0, 20.0)


def test_align_boundary_frame_forward_only():
    seq = [[cand(t, (5, 5, 15, 15))] for t in range(10)]
    flows = {(r, 0): const_flow(0.0, 0.0) for r in (1, 2, 3)}
    warped = align_references(0, frame(0), seq, flows)
    assert len(warped) == 3


def test_align_missing_flow_is_hard_error():
    seq = [[cand(t, (5, 5, 15, 15))] for t in range(5)]
    flows = zero_flows(5)
    del flows[(2, 3)]
    with pytest.raises(MissingFlowError, match=r"\(2, 3\)"):
        align_references(3, frame(3), seq, flows)


def test_align_empty_reference_frame_needs_no_flow():
    seq = [[cand(0, (5, 5, 15, 15))], [], [cand(2, (5, 5, 15, 15))]]
    flows = {(0, 2): const_flow(0.0, 0.0)}  # nothing for the empty frame 1
    warped = align_references(2, frame(2), seq, flows)
    assert len(warped) == 1


def test_align_drops_fully_outside_boxes():
    seq = [[cand(0, (0, 0, 5, 5))], []]
    flows = {(0, 1): const_flow(100.0, 0.0)}
    assert align_references(1, frame(1), seq, flows) == []


def test_align_target_out_of_range():
    with pytest.raises(ValueError):
        align_references(2, frame(2), [[]], {})


# ---------------------------------------------------------------- fuse


def test_fuse_three_identical():
    boxes = [cand(0, (10, 10, 20, 20), score=s, source=BoxSource.WARPED_REFERENCE) for s in (0.9, 0.8, 0.7)]
    fused = fuse_references(boxes)
    assert len(fused) == 1
    assert fused[0].box.as_tuple() == (10.0, 10.0, 20.0, 20.0)
    assert fused[0].score == pytest.approx(0.8)
    assert fused[0].source is BoxSource.FUSED


def test_fuse_two_members_below_min_group():
    boxes = [cand(0, (10, 10, 20, 20), score=s, source=BoxSource.WARPED_REFERENCE) for s in (0.9, 0.8)]
    assert fuse_references(boxes) == []


def test_fuse_jittered_group_encloses_members():
    tuples = [(10, 10, 20, 20), (9, 10, 20, 20), (10, 9, 20, 21)]
    boxes = [
        cand(0, t, score=0.9 - 0.1 * i, source=BoxSource.WARPED_REFERENCE)
        for i, t in enumerate(tuples)
    ]
    fused = fuse_references(boxes)
    assert len(fused) == 1
    assert fused[0].box.as_tuple() == (9.0, 9.0, 20.0, 21.0)
    for b in boxes:
        assert fused[0].box.x1 <= b.box.x1 and fused[0].box.x2 >= b.box.x2
        assert fused[0].box.y1 <= b.box.y1 and fused[0].box.y2 >= b.box.y2


def test_fuse_mean_rule():
    tuples = [(9, 10, 20, 20), (11, 10, 20, 20), (10, 10, 20, 20)]
    boxes = [cand(0, t, source=BoxSource.WARPED_REFERENCE) for t in tuples]
    fused = fuse_references(boxes, StabilizationParams(fusion="mean"))
    assert len(fused) == 1
    assert fused[0].box.as_tuple() == (10.0, 10.0, 20.0, 20.0)


def test_fuse_groups_split_by_overlap():
    # two spatially separate triples fuse into two proposals
    a = [cand(0, (5, 5, 15, 15), score=0.9, source=BoxSource.WARPED_REFERENCE)] * 3
    b = [cand(0, (30, 20, 45, 35), score=0.8, source=BoxSource.WARPED_REFERENCE)] * 3
    fused = fuse_references(a + b)
    assert len(fused) == 2
    assert fused[0].box.as_tuple() == (5.0, 5.0, 15.0, 15.0)  # higher score pivots first
    assert fused[1].box.as_tuple() == (30.0, 20.0, 45.0, 35.0)


# ---------------------------------------------------------------- refine


def test_refine_current_equals_fused():
    b = cand(0, (10, 10, 20, 20))
    f = cand(0, (10, 10, 20, 20), source=BoxSource.FUSED)
    out = refine_current([b], [f])
    assert len(out) == 1
    assert out[0] is b


def test_refine_spurious_replaced_by_fused():
    spurious = cand(0, (1, 1, 5, 5))
    f = cand(0, (20, 20, 35, 35), source=BoxSource.FUSED)
    out = refine_current([spurious], [f])
    assert len(out) == 1
    assert out[0] is f


def test_refine_near_threshold_keeps_both():
    b = cand(0, (0, 0, 10, 10))
    f = cand(0, (0, 0, 10, 10.0 / 0.65), source=BoxSource.FUSED)
    overlap = iou(b.box, f.box)
    assert 0.6 <= overlap < 0.7
    out = refine_current([b], [f])
    assert len(out) == 2
    assert out[0] is b and out[1] is f


def test_refine_empty_fused_is_identity():
    current = [cand(0, (1, 1, 9, 9)), cand(0, (20, 20, 30, 30))]
    assert refine_current(current, []) == current


def test_refine_output_order():
    k1 = cand(0, (10, 10, 20, 20), score=0.3)
    k2 = cand(0, (30, 10, 40, 20), score=0.9)
    f1 = cand(0, (10, 10, 20, 20), source=BoxSource.FUSED, score=0.5)
    f_far_lo = cand(0, (5, 30, 12, 38), source=BoxSource.FUSED, score=0.4)
    f_far_hi = cand(0, (40, 30, 50, 38), source=BoxSource.FUSED, score=0.6)
    # k2 unsupported and dropped; k1 kept; both far fused boxes added by score
    out = refine_current([k1, k2], [f1, f_far_lo, f_far_hi])
    assert out == [k1, f_far_hi, f_far_lo]


def test_refine_every_output_supported_or_fused():
    rng = np.random.default_rng(8)
    for _ in range(50):
        current = []
        fused = []
        for _ in range(rng.integers(0, 6)):
            x, y = rng.uniform(0, 40, 2)
            w, h = rng.uniform(3, 15, 2)
            current.append(cand(0, (x, y, x + w, y + h), score=float(rng.uniform(0.1, 1))))
        for _ in range(rng.integers(0, 4)):
            x, y = rng.uniform(0, 40, 2)
            w, h = rng.uniform(3, 15, 2)
            fused.append(
                cand(0, (x, y, x + w, y + h), score=float(rng.uniform(0.1, 1)), source=BoxSource.FUSED)
            )
        out = refine_current(current, fused)
        if not fused:
            assert out == current  # documented pass-through
            continue
        for c in out:
            if c.source is BoxSource.FUSED:
                assert c in fused
            else:
                assert any(iou(c.box, f.box) >= 0.6 for f in fused)


# ---------------------------------------------------------------- sequence


def test_single_frame_passthrough():
    current = [cand(0, (10, 10, 20, 20)), cand(0, (30, 5, 40, 18))]
    out = stabilize_sequence([frame(0)], [current], {})
    assert out == [current]


def test_missed_detection_recovered():
    n = 7
    seq = [[cand(t, (10, 10, 20, 20))] for t in range(n)]
    seq[3] = []
    out = stabilize_sequence([frame(t) for t in range(n)], seq, zero_flows(n))
    assert len(out[3]) == 1
    assert out[3][0].box.as_tuple() == (10.0, 10.0, 20.0, 20.0)
    assert out[3][0].source is BoxSource.FUSED
    # steady frames keep their own candidate
    assert out[2] and out[2][0].source is BoxSource.CURRENT


def test_stabilize_frame_composition():
    n = 7
    rng = np.random.default_rng(12)
    seq = []
    for t in range(n):
        boxes = []
        for _ in range(int(rng.integers(1, 4))):
            x, y = rng.uniform(0, 30, 2)
            w, h = rng.uniform(5, 20, 2)
            boxes.append(cand(t, (x, y, min(x + w, W), min(y + h, H)), score=float(rng.uniform(0.2, 1))))
        seq.append(boxes)
    flows = zero_flows(n)
    params = StabilizationParams()
    direct = stabilize_frame(3, frame(3), seq, flows, params)
    warped = align_references(3, frame(3), seq, flows, params)
    fused = fuse_references(warped, params)
    manual = refine_current(seq[3], fused, params)
    assert [c.box.as_tuple() for c in direct] == [c.box.as_tuple() for c in manual]
    assert [c.source for c in direct] == [c.source for c in manual]


def test_sequence_alignment_check_and_determinism():
    with pytest.raises(ValueError):
        stabilize_sequence([frame(0)], [[], []], {})
    n = 9
    seq = [[cand(t, (8 + t, 6, 20 + t, 18), score=0.5 + 0.04 * t)] for t in range(n)]
    flows = {
        (r, t): const_flow(float(t - r), 0.0)
        for t in range(n)
        for r in range(max(0, t - 3), min(n, t + 4))
        if r != t
    }
    frames = [frame(t) for t in range(n)]
    a = stabilize_sequence(frames, seq, flows)
    b = stabilize_sequence(frames, seq, flows)
    assert a == b


def test_params_validation():
    with pytest.raises(ValueError):
        StabilizationParams(window_radius=0).validate()
    with pytest.raises(ValueError):
        StabilizationParams(iou_group=0.0).validate()
    with pytest.raises(ValueError):
        StabilizationParams(min_group_size=0).validate()
    with pytest.raises(ValueError):
        StabilizationParams(fusion="median").validate()
