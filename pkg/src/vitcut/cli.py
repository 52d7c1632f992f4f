"""Command-line entry point.

Exit codes: 0 on success, 1 on validation problems (bad arguments, bad
config, malformed or missing inputs), 2 on runtime failures inside a
stage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .distill import DistillSample, distill_loss, tree_sum
from .evaluation import sweep_topk
from .labels import SchemaError, load_labels
from .overlay import emit_overlays
from .pipeline import (
    MissingInputError,
    StageError,
    _collect_eval_frames,
    _map_ordered,
    run_pipeline,
)
from .selsa import AggregationBatch, selsa_aggregate
from .tensorio import TensorFileError, read_tensor, write_tensor


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; remap to 1 (validation)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="vitcut", description="Temporally stabilized pseudo-labels for video.")
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=None, help="override the worker count")
    p.add_argument("--print-config", action="store_true",
                   help="print the fully merged config and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def stage_parser(name: str, help_text: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--root", type=Path, default=None, help="dataset root directory")
        return sp

    stage_parser("synth", "generate a synthetic dataset (frames, features, labels)")
    stage_parser("flow", "compute pairwise flow fields inside the temporal window")
    stage_parser("extract", "extract candidate boxes and masks from patch features")
    stage_parser("stabilize", "fuse warped temporal references into stabilized labels")
    stage_parser("videocut", "run the mask-track baseline with background removal")
    ev = stage_parser("eval", "score predictions against ground truth")
    ev.add_argument("--pred", type=str, default=None,
                    help="prediction set: candidates, stabilized, or videocut")

    sw = stage_parser("sweep-topk", "average recall as the per-frame detection cap sweeps")
    sw.add_argument("--pred", type=str, default=None)
    sw.add_argument("--ks", type=str, default="30,100,120,150,200",
                    help="comma-separated detection caps")

    lo = sub.add_parser("losses", help="distillation loss breakdown over a sample batch")
    lo.add_argument("--samples", type=Path, required=True,
                    help="JSON list of {pred, target, student_score, teacher_score}")
    lo.add_argument("--out", type=Path, default=None, help="JSONL output (default stdout)")

    se = sub.add_parser("selsa", help="aggregate support features against key features")
    se.add_argument("--key", type=Path, required=True, help="[n, d] tensor file")
    se.add_argument("--support", type=Path, required=True, help="[n, d] tensor file")
    se.add_argument("--out", type=Path, required=True, help="aggregated [n, d] tensor file")
    se.add_argument("--temperature", type=float, default=None)

    ov = sub.add_parser("overlay", help="draw labels onto frames as PGM/PPM images")
    ov.add_argument("--labels", type=Path, required=True, help="label document")
    ov.add_argument("--frames-root", type=Path, default=None,
                    help="directory holding <video>/frames (default: dataset root)")
    ov.add_argument("--out", type=Path, required=True, help="output directory")
    return p


def _cmd_losses(cfg: dict, args: argparse.Namespace) -> int:
    spec = json.loads(args.samples.read_text())
    if not isinstance(spec, list):
        raise SchemaError(f"{args.samples}: expected a JSON list of samples")
    base = args.samples.parent
    samples: list[DistillSample] = []
    for i, entry in enumerate(spec):
        try:
            samples.append(DistillSample(
                pred_mask=read_tensor(base / entry["pred"]).astype(np.float64),
                target_mask=read_tensor(base / entry["target"]).astype(np.float64),
                student_score=float(entry["student_score"]),
                teacher_score=float(entry["teacher_score"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{args.samples}[{i}]: {exc}") from exc

    breakdowns = _map_ordered(distill_loss, samples, int(cfg["workers"]))
    lines = []
    for i, b in enumerate(breakdowns):
        lines.append(json.dumps({
            "index": i, "bce": b.bce, "dice": b.dice, "boundary": b.boundary,
            "seg": b.seg, "score": b.score, "total": b.total,
        }, sort_keys=True))
    totals = {
        field: tree_sum([getattr(b, field) for b in breakdowns])
        for field in ("bce", "dice", "boundary", "seg", "score", "total")
    }
    lines.append(json.dumps({"count": len(breakdowns), "totals": totals}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_selsa(cfg: dict, args: argparse.Namespace) -> int:
    key = read_tensor(args.key)
    support = read_tensor(args.support)
    temp = args.temperature if args.temperature is not None else cfg["selsa"]["temperature"]
    batch = AggregationBatch(key=key.astype(np.float64), support=support.astype(np.float64),
                             temperature=float(temp))
    write_tensor(args.out, selsa_aggregate(batch).astype(np.float32))
    return 0


def _cmd_eval(cfg: dict, args: argparse.Namespace) -> int:
    if args.pred is not None:
        if args.pred not in ("candidates", "stabilized", "videocut"):
            raise ConfigError(f"--pred must name a pipeline output, got {args.pred!r}")
        cfg["evaluation"] = dict(cfg["evaluation"], pred=args.pred)
    run_pipeline(cfg, stages=["eval"])
    root = Path(cfg["dataset_root"])
    sys.stdout.write((root / "metrics.json").read_text())
    return 0


def _cmd_sweep_topk(cfg: dict, args: argparse.Namespace) -> int:
    try:
        ks = [int(k) for k in args.ks.split(",") if k.strip()]
    except ValueError as exc:
        raise ConfigError(f"--ks must be comma-separated integers: {exc}") from exc
    if not ks:
        raise ConfigError("--ks must name at least one detection cap")
    root = Path(cfg["dataset_root"])
    pred_name = args.pred or cfg["evaluation"]["pred"]
    pred_path = root / f"{pred_name}.json"
    gt_path = root / "gt.json"
    for p in (pred_path, gt_path):
        if not p.is_file():
            raise MissingInputError(f"sweep-topk: missing input {p}")
    preds = load_labels(pred_path)
    gts = load_labels(gt_path)
    pred_frames, gt_frames, _ = _collect_eval_frames(root, preds, gts, load_masks=False)
    pairs = sweep_topk([(p[0], p[1]) for p in pred_frames], [g[0] for g in gt_frames], ks=ks)
    doc = [{"k": k, "ar": ar} for k, ar in pairs]
    out = root / "topk_sweep.json"
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    return 0


def _cmd_overlay(cfg: dict, args: argparse.Namespace) -> int:
    labels = load_labels(args.labels)
    frames_root = args.frames_root or Path(cfg["dataset_root"])
    emit_overlays(labels, args.labels, frames_root, args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.workers is not None:
            overrides["workers"] = args.workers
        cfg = load_config(args.config, overrides)
        if getattr(args, "root", None) is not None:
            cfg["dataset_root"] = str(args.root)

        if args.print_config:
            sys.stdout.write(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            sys.stderr.write("vitcut: error: a subcommand is required\n")
            return 1

        if args.command in ("synth", "flow", "extract", "stabilize", "videocut"):
            run_pipeline(cfg, stages=[args.command])
            return 0
        if args.command == "eval":
            return _cmd_eval(cfg, args)
        if args.command == "sweep-topk":
            return _cmd_sweep_topk(cfg, args)
        if args.command == "losses":
            return _cmd_losses(cfg, args)
        if args.command == "selsa":
            return _cmd_selsa(cfg, args)
        if args.command == "overlay":
            return _cmd_overlay(cfg, args)
        parser.error(f"unknown command {args.command!r}")
        return 1
    except (ConfigError, SchemaError, MissingInputError, TensorFileError,
            json.JSONDecodeError) as exc:
        sys.stderr.write(f"vitcut: error: {exc}\n")
        return 1
    except ValueError as exc:
        sys.stderr.write(f"vitcut: error: {exc}\n")
        return 1
    except StageError as exc:
        sys.stderr.write(f"vitcut: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"vitcut: error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort runtime mapping
        sys.stderr.write(f"vitcut: runtime failure: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
