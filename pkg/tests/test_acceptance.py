"""End-to-end acceptance checks.

One test per shipped guarantee, each emitting a single [PASS]/[FAIL] line
with the measured margin. Oracles here are written independently of the
library code: closed-form translation for box warping, an explicit
rule-application loop for refinement, a dense eigensolver for the spectral
cut, and central finite differences for gradients.
"""

import time
import warnings

import numpy as np

from vitcut.distill import DistillSample, LrSchedule, distill_loss, loss_gradients
from vitcut.evaluation import average_recall, center_jitter, instance_track, sweep_topk
from vitcut.extraction import ncut_second_eigenvector
from vitcut.flow import FlowField, estimate_flow, warp_box
from vitcut.geometry import BBox, BoxSource, Candidate, FrameRef, iou
from vitcut.selsa import AggregationBatch, selsa_aggregate, softmax_weights
from vitcut.stabilization import StabilizationParams, refine_current, stabilize_sequence
from vitcut.synthetic import (
    NoiseParams,
    RectSpec,
    SyntheticScene,
    flow_scene,
    generate_synthetic,
)


def _line(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


_REF = FrameRef(video="acc", index=0, width=400, height=400)


def _cand(box: BBox, score: float, source: BoxSource = BoxSource.CURRENT) -> Candidate:
    return Candidate(box=box, score=score, source=source, frame=_REF)


# ------------------------------------------------------------ criterion 1


def test_criterion_01_box_warp_closed_form():
    """Warping under constant flow equals closed-form translation bit-exactly.

    Flow components are drawn from the 1/64 px grid, where box-mean
    averaging is provably exact, so any deviation is a real defect.
    """
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        w = int(rng.integers(16, 65))
        h = int(rng.integers(16, 65))
        x1 = rng.uniform(0.0, w - 3.0)
        y1 = rng.uniform(0.0, h - 3.0)
        box = BBox(x1, y1, x1 + rng.uniform(2.0, w - x1), y1 + rng.uniform(2.0, h - y1))
        du = float(rng.integers(-640, 641)) / 64.0
        dv = float(rng.integers(-640, 641)) / 64.0
        flow = FlowField(u=np.full((h, w), du), v=np.full((h, w), dv),
                         src_index=0, dst_index=1)
        got = warp_box(box, flow)
        want = box.translate(du, dv)
        worst = max(worst, max(abs(a - b) for a, b in zip(got.as_tuple(), want.as_tuple())))
    elapsed = time.perf_counter() - t0
    _line(
        "box warp closed form",
        worst == 0.0 and elapsed < 1.0,
        f"1000 cases, max |dev| = {worst:.3e} (need 0), {elapsed:.2f}s (budget 1s)",
    )


# ------------------------------------------------------------ criterion 2


def _refine_oracle(current, fused, keep_thr, add_thr):
    """Explicit rule application: keep supported current boxes, then add
    fused boxes not covered by a kept one; order kept-first, added by score."""
    if len(fused) == 0:
        return list(current)
    kept = []
    for cand in current:
        best = 0.0
        for f in fused:
            best = max(best, iou(cand.box, f.box))
        if best >= keep_thr:
            kept.append(cand)
    survivors = []
    for f in fused:
        best = 0.0
        for cand in kept:
            best = max(best, iou(cand.box, f.box))
        if best < add_thr:
            survivors.append(f)
    survivors.sort(key=lambda f: -f.score)
    return kept + survivors


def _random_box(rng) -> BBox:
    x1 = rng.uniform(0.0, 80.0)
    y1 = rng.uniform(0.0, 80.0)
    return BBox(x1, y1, x1 + rng.uniform(6.0, 24.0), y1 + rng.uniform(6.0, 24.0))


def _jittered(box: BBox, rng) -> BBox:
    cx, cy = box.center
    w = box.width * rng.uniform(0.6, 1.4)
    h = box.height * rng.uniform(0.6, 1.4)
    cx += rng.uniform(-5.0, 5.0)
    cy += rng.uniform(-5.0, 5.0)
    return BBox(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def test_criterion_02_refinement_rule_oracle():
    """refine_current agrees with the exhaustive rule oracle at 0.6/0.7."""
    params = StabilizationParams(iou_keep=0.6, iou_add=0.7)
    rng = np.random.default_rng(202)
    disagreements = 0
    for _ in range(500):
        current = [_cand(_random_box(rng), float(rng.uniform(0.2, 1.0)))
                   for _ in range(int(rng.integers(0, 9)))]
        fused = []
        for _ in range(int(rng.integers(0, 9))):
            if current and rng.uniform() < 0.6:
                base = current[int(rng.integers(len(current)))].box
                box = _jittered(base, rng)
            else:
                box = _random_box(rng)
            fused.append(_cand(box, float(rng.uniform(0.2, 1.0)), BoxSource.FUSED))
        got = refine_current(current, fused, params)
        want = _refine_oracle(current, fused, params.iou_keep, params.iou_add)
        if got != want:
            disagreements += 1
    _line(
        "refinement rule fidelity",
        disagreements == 0,
        f"500 randomized configurations at 0.6/0.7, {disagreements} disagreements (need 0)",
    )


# ------------------------------------------------------------ criterion 3


def test_criterion_03_flow_recovery():
    """Estimated flow inside object support is accurate for |v| <= 4 px."""
    velocities = [(4.0, 0.0), (-4.0, 0.0), (0.0, 4.0), (0.0, -4.0),
                  (2.0, 2.0), (-2.0, 2.0), (2.0, -2.0), (-2.0, -2.0),
                  (3.0, -1.0), (-1.0, 3.0)]
    t0 = time.perf_counter()
    worst = 0.0
    for seed, vel in enumerate(velocities):
        f0, f1, support = flow_scene(seed, vel)
        field = estimate_flow(f0, f1, src_index=0, dst_index=1)
        err = np.hypot(field.u - vel[0], field.v - vel[1])
        worst = max(worst, float(err[support].mean()))
    elapsed = time.perf_counter() - t0
    _line(
        "flow recovery",
        worst <= 0.5 and elapsed < 30.0,
        f"10 scenes, worst support MAE = {worst:.3f}px (budget 0.5px), "
        f"{elapsed:.1f}s (budget 30s)",
    )


# ------------------------------------------------------------ criterion 4


def test_criterion_04_stabilization_benefit():
    """Stabilizing noisy candidates cuts center jitter and keeps recall.

    20-frame scene, candidate jitter sigma = 2 px, dropout 0.2, spurious
    rate 0.3; metrics averaged over 10 seeds with estimated (not oracle)
    flow fields.
    """
    scene = SyntheticScene(
        width=192, height=144, length=20,
        rectangles=[RectSpec(size=(40.0, 32.0), velocity=(4.0, 1.5), phase=0.2),
                    RectSpec(size=(36.0, 42.0), velocity=(-3.0, 2.5), phase=0.7)],
        noise=NoiseParams(jitter_sigma=2.0, dropout=0.2, spurious_rate=0.3),
    )
    params = StabilizationParams()
    t0 = time.perf_counter()

    def seed_metrics(seed: int):
        data = generate_synthetic(scene, seed)
        grays = [f.astype(np.float32) / 255.0 for f in data.frames]
        flows = {}
        for a in range(scene.length):
            for b in range(scene.length):
                if a != b and abs(a - b) <= params.window_radius:
                    flows[(a, b)] = estimate_flow(grays[a], grays[b], src_index=a, dst_index=b)
        refs = [FrameRef(video="s", index=t, width=scene.width, height=scene.height)
                for t in range(scene.length)]
        stabilized = stabilize_sequence(refs, data.candidates, flows, params)

        def score(cands_by_frame):
            boxes_scores = [([c.box for c in cs], [c.score for c in cs])
                            for cs in cands_by_frame]
            gt_boxes = [[b for _, b in bs] for bs in data.gt_boxes]
            ar50 = average_recall(boxes_scores, gt_boxes, thresholds=[0.5])
            jitters = []
            for inst in range(len(scene.rectangles)):
                gt_track = [dict(bs)[inst] for bs in data.gt_boxes]
                track, kept = instance_track([bs[0] for bs in boxes_scores], gt_track)
                if len(track) >= 2:
                    jitters.append(center_jitter(track, kept))
            return ar50, float(np.mean(jitters))

        ar_raw, j_raw = score(data.candidates)
        ar_stab, j_stab = score(stabilized)
        return ar_raw, j_raw, ar_stab, j_stab

    rows = np.array([seed_metrics(s) for s in range(10)])
    elapsed = time.perf_counter() - t0
    ar_raw, j_raw, ar_stab, j_stab = rows.mean(axis=0)
    ratio = j_stab / j_raw
    ok = ratio <= 0.7 and ar_stab >= ar_raw and elapsed < 120.0
    _line(
        "stabilization benefit",
        ok,
        f"jitter {j_raw:.2f}->{j_stab:.2f}px ratio {ratio:.3f} (budget 0.7), "
        f"AR50 {ar_raw:.3f}->{ar_stab:.3f} (must not drop), "
        f"{elapsed:.0f}s over 10 seeds (budget 120s)",
    )


# ------------------------------------------------------------ criterion 5


def _random_sample(rng, shape=(8, 8)) -> DistillSample:
    return DistillSample(
        pred_mask=rng.uniform(0.02, 0.98, shape),
        target_mask=(rng.uniform(0.0, 1.0, shape) > 0.5).astype(np.float64),
        student_score=float(rng.uniform(0.05, 0.95)),
        teacher_score=float(rng.uniform(0.05, 0.95)),
    )


def test_criterion_05_loss_identities():
    """seg = 0.5 bce + 0.3 dice + 0.2 boundary and total = seg + score."""
    rng = np.random.default_rng(505)
    worst = 0.0
    dice_ok = True
    for i in range(1000):
        shape = (8, 8) if i % 3 else (9, 12)
        b = distill_loss(_random_sample(rng, shape))
        worst = max(
            worst,
            abs(b.seg - (0.5 * b.bce + 0.3 * b.dice + 0.2 * b.boundary)),
            abs(b.total - (b.seg + b.score)),
        )
        dice_ok = dice_ok and 0.0 <= b.dice < 1.0
    target = (rng.uniform(0.0, 1.0, (8, 8)) > 0.5).astype(np.float64)
    perfect = distill_loss(DistillSample(pred_mask=target.copy(), target_mask=target,
                                         student_score=1.0, teacher_score=1.0))
    ok = worst <= 1e-12 and dice_ok and perfect.total < 1e-5
    _line(
        "loss identities",
        ok,
        f"1000 samples, max identity error = {worst:.2e} (budget 1e-12), "
        f"dice in [0,1): {dice_ok}, perfect total = {perfect.total:.2e} (budget 1e-5)",
    )


# ------------------------------------------------------------ criterion 6


def _fd_gradients(sample: DistillSample, h: float = 1e-5):
    def total(pred, s):
        return distill_loss(DistillSample(
            pred_mask=pred, target_mask=sample.target_mask,
            student_score=s, teacher_score=sample.teacher_score)).total

    grad = np.zeros_like(sample.pred_mask)
    for idx in np.ndindex(sample.pred_mask.shape):
        up = sample.pred_mask.copy()
        dn = sample.pred_mask.copy()
        up[idx] += h
        dn[idx] -= h
        grad[idx] = (total(up, sample.student_score) - total(dn, sample.student_score)) / (2 * h)
    s = sample.student_score
    sgrad = (total(sample.pred_mask, s + h) - total(sample.pred_mask, s - h)) / (2 * h)
    return grad, sgrad


def test_criterion_06_gradient_checks():
    """Analytic gradients match central finite differences on 8x8 samples."""
    rng = np.random.default_rng(606)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        sample = _random_sample(rng)
        got_mask, got_score = loss_gradients(sample)
        fd_mask, fd_score = _fd_gradients(sample)
        rel = np.abs(got_mask - fd_mask) / np.maximum(
            np.maximum(np.abs(got_mask), np.abs(fd_mask)), 1e-3
        )
        worst = max(worst, float(rel.max()),
                    abs(got_score - fd_score) / max(abs(got_score), abs(fd_score), 1e-3))
    elapsed = time.perf_counter() - t0
    _line(
        "gradient checks",
        worst < 1e-4 and elapsed < 10.0,
        f"100 samples, max relative error = {worst:.2e} (budget 1e-4), "
        f"{elapsed:.1f}s (budget 10s)",
    )


# ------------------------------------------------------------ criterion 7


def test_criterion_07_lr_schedule_anchors():
    sched = LrSchedule()
    anchors = [(0.0, 0.0), (5.0, 2e-4), (20.0, 2e-4), (40.0, 1e-6)]
    got = [(t, sched.lr_at(t)) for t, _ in anchors]
    ok = all(g == w for (_, g), (_, w) in zip(got, anchors))
    _line(
        "lr schedule anchors",
        ok,
        "lr(0)=%g lr(5)=%g lr(20)=%g lr(40)=%g (need 0, 2e-4, 2e-4, 1e-6 exactly)"
        % tuple(v for _, v in got),
    )


# ------------------------------------------------------------ criterion 8


def _dense_second_eigvec(affinity: np.ndarray) -> np.ndarray:
    deg = affinity.sum(axis=1)
    inv = 1.0 / np.sqrt(deg)
    lap = np.eye(affinity.shape[0]) - affinity * inv[:, None] * inv[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = np.linalg.eigh(lap)
    v = vecs[:, 1]
    return v / np.linalg.norm(v)


def test_criterion_08_spectral_cut_oracle():
    """Iterative second eigenvector matches a dense eigensolver; a two-block
    affinity is split exactly by sign."""
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 33))
        r = rng.uniform(0.05, 1.0, (n, n))
        a = 0.5 * (r + r.T)
        np.fill_diagonal(a, 1.0)
        got = ncut_second_eigenvector(a)
        want = _dense_second_eigvec(a)
        worst = max(worst, min(float(np.abs(got - want).max()),
                               float(np.abs(got + want).max())))

    def split_ok(a, sizes):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vec = ncut_second_eigenvector(a)
        first = vec[: sizes[0]] > 0.0
        second = vec[sizes[0] :] > 0.0
        return (first.all() and not second.any()) or (second.all() and not first.any())

    weak = np.full((8, 8), 0.02)
    weak[:5, :5] = 1.0
    weak[5:, 5:] = 1.0
    blocks = np.zeros((7, 7))
    blocks[:3, :3] = 1.0
    blocks[3:, 3:] = 1.0
    two_block = split_ok(weak, (5, 3)) and split_ok(blocks, (3, 4))
    _line(
        "spectral cut oracle",
        worst <= 1e-6 and two_block,
        f"100 random affinities (N<=32), max |dev| up to sign = {worst:.2e} "
        f"(budget 1e-6), two-block split exact: {two_block}",
    )


# ------------------------------------------------------------ criterion 9


def test_criterion_09_aggregation_convexity():
    rng = np.random.default_rng(909)
    bounds_ok = True
    row_dev = 0.0
    for _ in range(50):
        nk = int(rng.integers(1, 7))
        ns = int(rng.integers(1, 9))
        d = int(rng.integers(2, 11))
        batch = AggregationBatch(
            key=rng.normal(size=(nk, d)),
            support=rng.normal(size=(ns, d)),
            temperature=float(rng.choice([0.5, 1.0, 2.0])),
        )
        out = selsa_aggregate(batch)
        w = softmax_weights(batch)
        row_dev = max(row_dev, float(np.abs(w.sum(axis=1) - 1.0).max()))
        bounds_ok = bounds_ok and bool((w >= 0.0).all())
        lo = batch.support.min(axis=0) - 1e-12
        hi = batch.support.max(axis=0) + 1e-12
        bounds_ok = bounds_ok and bool(((out >= lo) & (out <= hi)).all())
    anchor = rng.normal(size=7)
    same = AggregationBatch(key=rng.normal(size=(3, 7)),
                            support=np.tile(anchor, (5, 1)), temperature=1.0)
    exact = all(np.array_equal(row, anchor) for row in selsa_aggregate(same))
    _line(
        "aggregation convexity",
        bounds_ok and row_dev <= 1e-9 and exact,
        f"bounds hold: {bounds_ok}, max softmax row deviation = {row_dev:.2e} "
        f"(budget 1e-9), identical-support exact: {exact}",
    )


# ----------------------------------------------------------- criterion 10


def test_criterion_10_topk_monotonicity():
    rng = np.random.default_rng(1010)
    frames_p, frames_g = [], []
    for _ in range(5):
        gts = []
        for _ in range(8):
            x1 = rng.uniform(0.0, 220.0)
            y1 = rng.uniform(0.0, 220.0)
            gts.append(BBox(x1, y1, x1 + rng.uniform(18.0, 36.0), y1 + rng.uniform(18.0, 36.0)))
        preds = []
        for g in gts:
            for _ in range(2):
                preds.append(BBox(g.x1 + rng.uniform(-3.0, 3.0), g.y1 + rng.uniform(-3.0, 3.0),
                                  g.x2 + rng.uniform(-3.0, 3.0), g.y2 + rng.uniform(-3.0, 3.0)))
        for _ in range(210):
            x1 = rng.uniform(0.0, 230.0)
            y1 = rng.uniform(0.0, 230.0)
            preds.append(BBox(x1, y1, x1 + rng.uniform(8.0, 30.0), y1 + rng.uniform(8.0, 30.0)))
        frames_p.append((preds, rng.uniform(0.0, 1.0, len(preds)).tolist()))
        frames_g.append(gts)
    ks = [30, 100, 120, 150, 200]
    pairs = sweep_topk(frames_p, frames_g, ks=ks)
    ars = [ar for _, ar in pairs]
    monotone = all(b >= a for a, b in zip(ars, ars[1:]))
    _line(
        "top-k recall monotonicity",
        monotone and [k for k, _ in pairs] == ks,
        "AR over k in {30,100,120,150,200} = "
        + ", ".join(f"{ar:.3f}" for ar in ars)
        + " (must be non-decreasing)",
    )


# ----------------------------------------------------------- criterion 11


def test_criterion_11_worker_determinism(tmp_path):
    from vitcut.config import load_config
    from vitcut.pipeline import run_pipeline

    tracked = ["manifest.json", "gt.json", "candidates.json", "stabilized.json",
               "videocut.json", "metrics.json"]
    outputs = {}
    t0 = time.perf_counter()
    for workers in (1, 4):
        cfg = load_config(None)
        cfg["videos"] = ["clip"]
        cfg["stages"] = ["synth", "flow", "extract", "stabilize", "videocut", "eval"]
        cfg["workers"] = workers
        cfg["dataset_root"] = str(tmp_path / f"run{workers}")
        run_pipeline(cfg)
        outputs[workers] = {n: (tmp_path / f"run{workers}" / n).read_bytes() for n in tracked}
    elapsed = time.perf_counter() - t0
    same = [n for n in tracked if outputs[1][n] == outputs[4][n]]
    _line(
        "worker-count determinism",
        same == tracked,
        f"workers 1 vs 4 byte-identical on {len(same)}/{len(tracked)} artifacts "
        f"({', '.join(tracked)}), {elapsed:.0f}s",
    )
