"""Batch pipeline over a dataset directory.

Layout under the dataset root:

    <video>/frames/<index>.pgm            input frames
    <video>/<index>.<backbone>.vtk        patch-feature tensors
    <video>/flow/<src>_<dst>.vtk          pairwise flow fields
    <video>/masks/<index>_<k>.vtk         candidate masks
    <video>/gt_masks/<index>_<k>.vtk      ground-truth masks
    candidates.json / stabilized.json / videocut.json / gt.json
    metrics.json, training_recipe.json, manifest.json

Stages run in a fixed order (synth, flow, extract, stabilize, videocut,
eval) and each stage's outputs are content-hashed into a cumulative
manifest keyed by the configuration hash. Worker count changes
scheduling only, never bytes: per-item work is independent and results
are consumed in submission order.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from . import config as cfgmod
from .evaluation import (
    MetricReport,
    ap_range,
    average_precision,
    average_recall,
    center_jitter,
    instance_track,
    mean_mask_iou,
)
from .extraction import FeatureMap, extract_candidates
from .flow import FlowField, estimate_flow, load_flow, save_flow
from .geometry import BBox, BoxSource, Candidate, FrameRef
from .labels import (
    FrameLabels,
    Label,
    PseudoLabelSet,
    VideoLabels,
    load_labels,
    save_labels,
)
from .stabilization import stabilize_frame
from .synthetic import NoiseParams, RectSpec, SyntheticScene, frame_features, generate_synthetic
from .tensorio import read_pgm, read_tensor, write_pgm, write_tensor
from .videocut import videocut_sequence

_T = TypeVar("_T")
_R = TypeVar("_R")


class StageError(RuntimeError):
    """A pipeline stage failed; message carries the stage and frame id."""

    def __init__(self, stage: str, message: str, frame: str | None = None):
        self.stage = stage
        self.frame = frame
        at = f" at frame {frame}" if frame else ""
        super().__init__(f"stage {stage}{at}: {message}")


class MissingInputError(FileNotFoundError):
    """A required input file or directory is absent (caller error, not a
    mid-stage failure)."""


def _map_ordered(fn: Callable[[_T], _R], items: Sequence[_T], workers: int) -> list[_R]:
    """Apply fn preserving input order; thread pool only when workers > 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------- paths

def frames_dir(root: Path, video: str) -> Path:
    return root / video / "frames"


def frame_path(root: Path, video: str, index: int) -> Path:
    return frames_dir(root, video) / f"{index:06d}.pgm"


def feature_path(root: Path, video: str, index: int, backbone: str) -> Path:
    return root / video / f"{index:06d}.{backbone}.vtk"


def flow_path(root: Path, video: str, src: int, dst: int) -> Path:
    return root / video / "flow" / f"{src:06d}_{dst:06d}.vtk"


def discover_videos(root: Path, cfg: dict) -> list[str]:
    if cfg["videos"]:
        return list(cfg["videos"])
    if not root.is_dir():
        return []
    return sorted(d.name for d in root.iterdir() if (d / "frames").is_dir())


def list_frames(root: Path, video: str) -> list[int]:
    fdir = frames_dir(root, video)
    if not fdir.is_dir():
        return []
    return sorted(int(p.stem) for p in fdir.glob("*.pgm"))


def _frame_size(root: Path, video: str, index: int) -> tuple[int, int]:
    img = read_pgm(frame_path(root, video, index))
    return img.shape[1], img.shape[0]


# ---------------------------------------------------------- label glue

def _labels_to_candidates(
    video: VideoLabels, frames: Sequence[FrameLabels]
) -> tuple[list[list[Candidate]], dict[int, str]]:
    """Candidates per frame plus an id()-keyed map back to mask paths."""
    per_frame: list[list[Candidate]] = []
    mask_of: dict[int, str] = {}
    for fl in frames:
        ref = FrameRef(video=video.id, index=fl.index, width=video.width, height=video.height)
        cands = []
        for label in fl.labels:
            cand = Candidate(box=label.box, score=label.score, source=label.source, frame=ref)
            if label.mask_path is not None:
                mask_of[id(cand)] = label.mask_path
            cands.append(cand)
        per_frame.append(cands)
    return per_frame, mask_of


def _load_video_flows(
    root: Path, video: str, pairs: Iterable[tuple[int, int]]
) -> dict[tuple[int, int], FlowField]:
    flows: dict[tuple[int, int], FlowField] = {}
    for a, b in pairs:
        path = flow_path(root, video, a, b)
        if not path.is_file():
            raise MissingInputError(f"missing flow field {path} (run the flow stage first)")
        flows[(a, b)] = load_flow(path, src_index=a, dst_index=b)
    return flows


# --------------------------------------------------------------- stages

def stage_synth(cfg: dict, root: Path) -> list[Path]:
    syn = cfg["synthetic"]
    scene = SyntheticScene(
        width=int(syn["width"]),
        height=int(syn["height"]),
        length=int(syn["length"]),
        rectangles=[
            RectSpec(size=tuple(r["size"]), velocity=tuple(r["velocity"]), phase=float(r["phase"]))
            for r in syn["rectangles"]
        ],
        noise=NoiseParams(
            jitter_sigma=float(syn["noise"]["jitter_sigma"]),
            dropout=float(syn["noise"]["dropout"]),
            spurious_rate=float(syn["noise"]["spurious_rate"]),
        ),
    )
    try:
        data = generate_synthetic(scene, int(cfg["seed"]))
    except ValueError as exc:
        raise StageError("synth", str(exc)) from exc

    video = cfg["videos"][0] if cfg["videos"] else "synthetic"
    written: list[Path] = []
    fdir = frames_dir(root, video)
    fdir.mkdir(parents=True, exist_ok=True)
    gdir = root / video / "gt_masks"
    gdir.mkdir(parents=True, exist_ok=True)

    gt_video = VideoLabels(id=video, width=scene.width, height=scene.height)
    cand_video = VideoLabels(id=video, width=scene.width, height=scene.height)
    for t in range(scene.length):
        fpath = fdir / f"{t:06d}.pgm"
        write_pgm(fpath, data.frames[t])
        written.append(fpath)
        for backbone in cfg["backbones"]:
            feat = frame_features(data.frames[t], int(cfg["patch_size"]), backbone)
            ppath = feature_path(root, video, t, backbone)
            write_tensor(ppath, feat)
            written.append(ppath)

        gt_frame = FrameLabels(index=t)
        for k, ((inst, box), mask) in enumerate(zip(data.gt_boxes[t], data.gt_masks[t])):
            mpath = gdir / f"{t:06d}_{k:02d}.vtk"
            write_tensor(mpath, mask)
            written.append(mpath)
            gt_frame.labels.append(
                Label(box=box, score=1.0, source=BoxSource.GROUND_TRUTH,
                      mask_path=str(mpath.relative_to(root)), region_id=inst)
            )
        gt_video.frames.append(gt_frame)

        cand_frame = FrameLabels(index=t)
        for cand in data.candidates[t]:
            cand_frame.labels.append(Label(box=cand.box, score=cand.score, source=cand.source))
        cand_video.frames.append(cand_frame)

    gt_path = root / "gt.json"
    save_labels(gt_path, PseudoLabelSet(videos=[gt_video]))
    written.append(gt_path)
    cand_path = root / "candidates.json"
    save_labels(cand_path, PseudoLabelSet(videos=[cand_video]))
    written.append(cand_path)
    return written


def stage_flow(cfg: dict, root: Path) -> list[Path]:
    params = cfgmod.flow_params(cfg)
    radius = max(1, cfgmod.stabilization_params(cfg).window_radius)
    videos = discover_videos(root, cfg)
    if not videos:
        raise MissingInputError(f"flow: no videos with frames under {root}")
    written: list[Path] = []
    for video in videos:
        indices = list_frames(root, video)
        if len(indices) < 2:
            continue
        grays = {}
        for t in indices:
            grays[t] = read_pgm(frame_path(root, video, t)).astype(np.float32) / 255.0
        (root / video / "flow").mkdir(parents=True, exist_ok=True)
        pairs = [
            (a, b)
            for a in indices
            for b in indices
            if a != b and abs(a - b) <= radius
        ]

        def compute(pair: tuple[int, int], _video=video, _grays=grays) -> Path:
            a, b = pair
            try:
                field = estimate_flow(_grays[a], _grays[b], params, src_index=a, dst_index=b)
            except Exception as exc:
                raise StageError("flow", str(exc), frame=f"{_video}:{a}->{b}") from exc
            out = flow_path(root, _video, a, b)
            save_flow(out, field)
            return out

        written.extend(_map_ordered(compute, pairs, int(cfg["workers"])))
    return written


def stage_extract(cfg: dict, root: Path) -> list[Path]:
    params = cfgmod.extraction_params(cfg)
    patch = int(cfg["patch_size"])
    videos = discover_videos(root, cfg)
    if not videos:
        raise MissingInputError(f"extract: no videos with frames under {root}")
    written: list[Path] = []
    label_videos: list[VideoLabels] = []
    for video in videos:
        indices = list_frames(root, video)
        if not indices:
            continue
        width, height = _frame_size(root, video, indices[0])
        mdir = root / video / "masks"
        mdir.mkdir(parents=True, exist_ok=True)
        ref_of = {
            t: FrameRef(video=video, index=t, width=width, height=height) for t in indices
        }

        def run_frame(t: int, _video=video, _refs=ref_of) -> tuple[int, list[Candidate], list[np.ndarray]]:
            maps = []
            for backbone in cfg["backbones"]:
                path = feature_path(root, _video, t, backbone)
                if not path.is_file():
                    raise MissingInputError(f"missing feature tensor {path}")
                grid = read_tensor(path)
                if grid.ndim != 3:
                    raise StageError(
                        "extract", f"feature tensor {path} must be [Hp, Wp, C]", frame=f"{_video}:{t}"
                    )
                maps.append(FeatureMap(frame=_refs[t], backbone=backbone, grid=grid, patch_size=patch))
            try:
                cands, masks = extract_candidates(maps, params)
            except StageError:
                raise
            except Exception as exc:
                raise StageError("extract", str(exc), frame=f"{_video}:{t}") from exc
            return t, cands, masks

        results = _map_ordered(run_frame, indices, int(cfg["workers"]))
        vl = VideoLabels(id=video, width=width, height=height)
        for t, cands, masks in results:
            fl = FrameLabels(index=t)
            for k, (cand, mask) in enumerate(zip(cands, masks)):
                mpath = mdir / f"{t:06d}_{k:02d}.vtk"
                write_tensor(mpath, mask.astype(np.float32))
                written.append(mpath)
                fl.labels.append(
                    Label(box=cand.box, score=cand.score, source=cand.source,
                          mask_path=str(mpath.relative_to(root)))
                )
            vl.frames.append(fl)
        label_videos.append(vl)
    out = root / "candidates.json"
    save_labels(out, PseudoLabelSet(videos=label_videos))
    written.append(out)
    return written


TRAINING_RECIPE = {
    "detector_round": {
        "optimizer": "sgd",
        "iterations": 160000,
        "batch_size": 8,
        "learning_rate": 0.01,
        "labels": "stabilized.json",
        "score_floor": 0.0,
    },
    "distillation": {
        "optimizer": "adamw",
        "weight_decay": 0.01,
        "batch_size": 64,
        "epochs": 40,
        "schedule": {"peak": 2e-4, "floor": 1e-6, "warmup": 5, "restart": 20},
        "teacher_score_threshold": 0.7,
        "roi_resolution": 224,
        "mask_resolution": 64,
        "loss_weights": {"bce": 0.5, "dice": 0.3, "boundary": 0.2},
    },
}


def stage_stabilize(cfg: dict, root: Path) -> list[Path]:
    params = cfgmod.stabilization_params(cfg)
    cand_path = root / "candidates.json"
    if not cand_path.is_file():
        raise MissingInputError(f"stabilize: missing input {cand_path}")
    labels = load_labels(cand_path)
    written: list[Path] = []
    out_videos: list[VideoLabels] = []
    for video in labels.videos:
        frames = sorted(video.frames, key=lambda f: f.index)
        indices = [f.index for f in frames]
        per_frame, mask_of = _labels_to_candidates(video, frames)
        refs = [
            FrameRef(video=video.id, index=t, width=video.width, height=video.height)
            for t in indices
        ]
        pairs = set()
        for i, t in enumerate(indices):
            lo = max(0, i - params.window_radius)
            hi = min(len(indices) - 1, i + params.window_radius)
            for j in range(lo, hi + 1):
                if j != i and per_frame[j]:
                    pairs.add((indices[j], t))
        flows = _load_video_flows(root, video.id, sorted(pairs))
        # stabilize_sequence keys flows by frame position; indices are
        # contiguous from synth/extract, but remap defensively.
        pos_of = {t: i for i, t in enumerate(indices)}
        flows_by_pos = {
            (pos_of[a], pos_of[b]): f for (a, b), f in flows.items()
        }

        def run_target(i: int, _refs=refs, _per=per_frame, _flows=flows_by_pos) -> list[Candidate]:
            try:
                return stabilize_frame(i, _refs[i], _per, _flows, params)
            except Exception as exc:
                raise StageError(
                    "stabilize", str(exc), frame=f"{video.id}:{indices[i]}"
                ) from exc

        stabilized = _map_ordered(run_target, list(range(len(indices))), int(cfg["workers"]))
        vl = VideoLabels(id=video.id, width=video.width, height=video.height)
        for t, cands in zip(indices, stabilized):
            fl = FrameLabels(index=t)
            for cand in cands:
                fl.labels.append(
                    Label(box=cand.box, score=cand.score, source=cand.source,
                          mask_path=mask_of.get(id(cand)))
                )
            vl.frames.append(fl)
        out_videos.append(vl)
    out = root / "stabilized.json"
    save_labels(out, PseudoLabelSet(videos=out_videos))
    written.append(out)
    recipe = root / "training_recipe.json"
    recipe.write_text(json.dumps(TRAINING_RECIPE, indent=2, sort_keys=True) + "\n")
    written.append(recipe)
    return written


def stage_videocut(cfg: dict, root: Path) -> list[Path]:
    params = cfgmod.videocut_params(cfg)
    cand_path = root / "candidates.json"
    if not cand_path.is_file():
        raise MissingInputError(f"videocut: missing input {cand_path}")
    labels = load_labels(cand_path)
    out_videos: list[VideoLabels] = []
    for video in labels.videos:
        frames = sorted(video.frames, key=lambda f: f.index)
        indices = [f.index for f in frames]
        per_frame_masks: list[list[np.ndarray]] = []
        for fl in frames:
            masks = []
            for li, label in enumerate(fl.labels):
                if label.mask_path is None:
                    raise StageError(
                        "videocut",
                        f"label {li} has no mask; mask pseudo-labels are required",
                        frame=f"{video.id}:{fl.index}",
                    )
                masks.append(read_tensor(root / label.mask_path).astype(np.float32))
            per_frame_masks.append(masks)

        pairs = set()
        for i in range(len(indices)):
            if i > 0:
                pairs.add((indices[i - 1], indices[i]))
                pairs.add((indices[i], indices[i - 1]))
            if i + 1 < len(indices):
                pairs.add((indices[i], indices[i + 1]))
        flows = _load_video_flows(root, video.id, sorted(pairs)) if len(indices) > 1 else {}
        pos_of = {t: i for i, t in enumerate(indices)}
        flows_by_pos = {(pos_of[a], pos_of[b]): f for (a, b), f in flows.items()}
        try:
            regions = videocut_sequence(per_frame_masks, flows_by_pos, params)
        except Exception as exc:
            raise StageError("videocut", str(exc), frame=f"{video.id}:*") from exc

        vl = VideoLabels(id=video.id, width=video.width, height=video.height)
        by_frame: dict[int, list[Label]] = {t: [] for t in indices}
        for region in regions:
            for pos in region.frames:
                t = indices[pos]
                src = frames[pos].labels[region.source_index[pos]]
                by_frame[t].append(
                    Label(box=region.boxes[pos], score=src.score, source=src.source,
                          mask_path=src.mask_path, region_id=region.region_id)
                )
        for t in indices:
            vl.frames.append(FrameLabels(index=t, labels=by_frame[t]))
        out_videos.append(vl)
    out = root / "videocut.json"
    save_labels(out, PseudoLabelSet(videos=out_videos))
    return [out]


def _collect_eval_frames(
    root: Path, preds: PseudoLabelSet, gts: PseudoLabelSet, load_masks: bool = True
):
    """Align prediction and GT label sets frame-by-frame for the metrics."""
    pred_frames: list[tuple[list[BBox], list[float], list[np.ndarray | None]]] = []
    gt_frames: list[tuple[list[BBox], list[np.ndarray]]] = []
    tracks: list[tuple[list[list[BBox]], list[BBox]]] = []
    for gv in gts.videos:
        try:
            pv = preds.video(gv.id)
        except KeyError:
            raise StageError("eval", f"predictions missing video {gv.id!r}")
        pred_by_index = {f.index: f for f in pv.frames}
        gt_ordered = sorted(gv.frames, key=lambda f: f.index)
        inst_boxes: dict[int, list[BBox | None]] = {}
        pred_boxes_seq: list[list[BBox]] = []
        for pos, gf in enumerate(gt_ordered):
            pf = pred_by_index.get(gf.index, FrameLabels(index=gf.index))
            boxes = [l.box for l in pf.labels]
            scores = [l.score for l in pf.labels]
            masks: list[np.ndarray | None] = []
            for l in pf.labels:
                if load_masks and l.mask_path is not None:
                    masks.append(read_tensor(root / l.mask_path).astype(np.float32))
                else:
                    masks.append(None)
            pred_frames.append((boxes, scores, masks))
            pred_boxes_seq.append(boxes)
            g_boxes = [l.box for l in gf.labels]
            g_masks = []
            for l in gf.labels:
                if l.mask_path is None:
                    raise StageError("eval", f"GT label without mask in {gv.id}:{gf.index}")
                g_masks.append(read_tensor(root / l.mask_path).astype(np.float32))
                if l.region_id is not None:
                    inst_boxes.setdefault(l.region_id, [None] * len(gt_ordered))[pos] = l.box
            gt_frames.append((g_boxes, g_masks))
        for inst, series in sorted(inst_boxes.items()):
            present = [(i, b) for i, b in enumerate(series) if b is not None]
            if len(present) < 2:
                continue
            gt_track = [b for _, b in present]
            pred_per_frame = [pred_boxes_seq[i] for i, _ in present]
            tracks.append((pred_per_frame, gt_track))
    return pred_frames, gt_frames, tracks


def compute_metrics(
    root: Path, preds: PseudoLabelSet, gts: PseudoLabelSet, cfg: dict
) -> MetricReport:
    ev = cfg["evaluation"]
    pred_frames, gt_frames, tracks = _collect_eval_frames(root, preds, gts)
    boxes_scores = [(p[0], p[1]) for p in pred_frames]
    gt_boxes = [g[0] for g in gt_frames]
    cap = int(ev["det_cap"])
    jitters = []
    for pred_per_frame, gt_track in tracks:
        track, kept_gt = instance_track(pred_per_frame, gt_track, float(ev["jitter_min_iou"]))
        if len(track) >= 2:
            jitters.append(center_jitter(track, kept_gt))
    return MetricReport(
        ap=ap_range(boxes_scores, gt_boxes, det_cap=cap),
        ap50=average_precision(boxes_scores, gt_boxes, 0.5, det_cap=cap),
        ar=average_recall(boxes_scores, gt_boxes, det_cap=cap),
        ar_large=average_recall(
            boxes_scores, gt_boxes, det_cap=cap, large_only=True,
            large_area=float(ev["large_area"]),
        ),
        miou=mean_mask_iou(pred_frames, gt_frames, det_cap=cap),
        jitter=float(np.mean(jitters)) if jitters else None,
    )


def stage_eval(cfg: dict, root: Path) -> list[Path]:
    pred_name = cfg["evaluation"]["pred"]
    pred_path = root / f"{pred_name}.json"
    gt_path = root / "gt.json"
    for p in (pred_path, gt_path):
        if not p.is_file():
            raise MissingInputError(f"eval: missing input {p}")
    preds = load_labels(pred_path)
    gts = load_labels(gt_path)
    report = compute_metrics(root, preds, gts, cfg)
    out = root / "metrics.json"
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return [out]


_STAGE_FNS: dict[str, Callable[[dict, Path], list[Path]]] = {
    "synth": stage_synth,
    "flow": stage_flow,
    "extract": stage_extract,
    "stabilize": stage_stabilize,
    "videocut": stage_videocut,
    "eval": stage_eval,
}


def run_pipeline(cfg: dict, stages: list[str] | None = None) -> dict:
    """Run the requested stages in canonical order and update the manifest.

    Outputs are deterministic for a fixed config and inputs; rerunning a
    stage rewrites byte-identical files.
    """
    root = Path(cfg["dataset_root"])
    todo = cfgmod.ordered_stages(stages if stages is not None else cfg["stages"])
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / "manifest.json"
    manifest: dict = {"config_hash": cfgmod.config_hash(cfg), "stages": {}}
    if manifest_path.is_file():
        try:
            old = json.loads(manifest_path.read_text())
            if isinstance(old.get("stages"), dict):
                manifest["stages"] = old["stages"]
        except json.JSONDecodeError:
            pass

    for stage in todo:
        outputs = _STAGE_FNS[stage](cfg, root)
        manifest["stages"][stage] = {
            "outputs": {
                str(p.relative_to(root)): _sha256(p) for p in sorted(set(outputs))
            }
        }

    manifest_path.write_text(cfgmod.canonical_json(manifest) + "\n")
    return manifest
