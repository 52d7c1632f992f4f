import argparse
import json
import sys
from pathlib import Path

from .backbones import ModelLoadError
from .container import DecodeError
from .export import export_features, export_teacher_masks
from .manifest import ManifestError, verify_dir


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="feature-exporter",
        description="Dump per-frame features / teacher masks as checksummed tensors.",
    )
    sub = p.add_subparsers(dest="command")

    fe = sub.add_parser("features", help="export patch features for every frame")
    fe.add_argument("--frames", type=Path, required=True, help="directory of .pgm frames")
    fe.add_argument("--out", type=Path, required=True)
    fe.add_argument("--backbones", type=str, required=True,
                    help="comma-separated backbone ids, e.g. ref16p8,ref8p8")
    fe.add_argument("--weights", type=Path, default=None,
                    help="directory holding pretrained weights")

    tm = sub.add_parser("teacher-masks", help="export box-prompted teacher masks")
    tm.add_argument("--frames", type=Path, nargs="+", required=True, help="frame files")
    tm.add_argument("--boxes", type=Path, required=True,
                    help="JSON list (per frame) of [x1, y1, x2, y2] lists")
    tm.add_argument("--out", type=Path, required=True)
    tm.add_argument("--teacher", type=str, default="ref")
    tm.add_argument("--weights", type=Path, default=None)

    ve = sub.add_parser("verify", help="check every manifest checksum in a directory")
    ve.add_argument("--dir", type=Path, required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0

    try:
        if args.command == "features":
            manifest = export_features(args.frames, args.backbones, args.out, args.weights)
            sys.stdout.write(f"wrote {len(manifest.files)} tensor files to {args.out}\n")
            return 0
        if args.command == "teacher-masks":
            boxes = json.loads(args.boxes.read_text())
            manifest = export_teacher_masks(args.frames, boxes, args.out,
                                            args.teacher, args.weights)
            n_masks = sum(1 for f in manifest.files if f.endswith(".vtk"))
            sys.stdout.write(f"wrote {n_masks} masks to {args.out}\n")
            return 0
        if args.command == "verify":
            manifest = verify_dir(args.dir)
            sys.stdout.write(f"{len(manifest.files)} files verified\n")
            return 0
        parser.print_usage(sys.stderr)
        sys.stderr.write("feature-exporter: error: a subcommand is required\n")
        return 1
    except (ModelLoadError, DecodeError, ManifestError, FileNotFoundError,
            ValueError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"feature-exporter: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
