"""Export operations: per-frame backbone features and box-prompted teacher
masks, each producing a checksummed manifest.

Inference is sequential per frame. All tensor files are written before the
manifest; a consumer that sees the manifest can trust the files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .backbones import get_backbone
from .container import read_frame, sha256_file, write_tensor_file
from .manifest import ExportManifest
from .teacher import get_teacher

SCORES_NAME = "scores.json"


def _frame_list(frames_dir: str | Path) -> list[Path]:
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frames directory not found: {frames_dir}")
    frames = sorted(frames_dir.glob("*.pgm"))
    if not frames:
        raise ValueError(f"no .pgm frames under {frames_dir}")
    return frames


def export_features(
    frames_dir: str | Path,
    backbone_ids: str | Sequence[str],
    out_dir: str | Path,
    weights_root: str | Path | None = None,
) -> ExportManifest:
    """One feature tensor per frame per backbone; manifest written last.

    Output files are named <stem>.<backbone>.vtk so an export into a video
    directory lands exactly where the pipeline's extract stage reads.
    """
    if isinstance(backbone_ids, str):
        backbone_ids = [s for s in backbone_ids.split(",") if s]
    if not backbone_ids:
        raise ValueError("need at least one backbone id")
    # resolve every model before touching the filesystem
    backbones = [get_backbone(bid, weights_root) for bid in backbone_ids]
    patch_sizes = {bb.patch_size for bb in backbones}
    if len(patch_sizes) != 1:
        raise ValueError(f"backbones disagree on patch size: {sorted(patch_sizes)}")

    frames = _frame_list(frames_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    files: dict[str, str] = {}
    channels: dict[str, int] = {}
    for frame_path in frames:
        frame = read_frame(frame_path)
        for bid, bb in zip(backbone_ids, backbones):
            grid = bb.extract(frame)
            if channels.setdefault(bid, grid.shape[2]) != grid.shape[2]:
                raise ValueError(
                    f"{bid}: channel count changed across frames "
                    f"({channels[bid]} then {grid.shape[2]})"
                )
            rel = f"{frame_path.stem}.{bid}.vtk"
            files[rel] = write_tensor_file(out_dir / rel, grid)

    manifest = ExportManifest(
        kind="features",
        backbones=tuple(backbone_ids),
        patch_size=backbones[0].patch_size,
        frames=tuple(p.name for p in frames),
        files=files,
    )
    manifest.save(out_dir)
    return manifest


def export_teacher_masks(
    frame_paths: Sequence[str | Path],
    boxes_per_frame: Sequence[Sequence[tuple[float, float, float, float]]],
    out_dir: str | Path,
    teacher_id: str = "ref",
    weights_root: str | Path | None = None,
) -> ExportManifest:
    """Per (frame, box): one mask grid tensor plus a score record.

    scores.json lists one entry per emitted mask in emission order and is
    checksummed like every other output. Zero boxes is a valid export: the
    manifest simply lists no files.
    """
    if len(frame_paths) != len(boxes_per_frame):
        raise ValueError(
            f"{len(frame_paths)} frames but {len(boxes_per_frame)} box lists"
        )
    teacher = get_teacher(teacher_id, weights_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    files: dict[str, str] = {}
    records: list[dict] = []
    total = sum(len(b) for b in boxes_per_frame)
    for frame_path, boxes in zip(frame_paths, boxes_per_frame):
        frame_path = Path(frame_path)
        if not boxes:
            continue
        frame = read_frame(frame_path)
        for k, box in enumerate(boxes):
            mask, score = teacher.predict(frame, tuple(float(v) for v in box))
            rel = f"{frame_path.stem}_{k:02d}.mask.vtk"
            files[rel] = write_tensor_file(out_dir / rel, np.asarray(mask, dtype=np.float32))
            records.append({"frame": frame_path.name, "index": k,
                            "mask": rel, "score": score})

    if total:
        scores_path = out_dir / SCORES_NAME
        scores_path.write_text(json.dumps(records, indent=2) + "\n")
        files[SCORES_NAME] = sha256_file(scores_path)

    manifest = ExportManifest(
        kind="teacher-masks",
        backbones=(teacher_id,),
        patch_size=getattr(teacher, "mask_size", 0),
        frames=tuple(Path(p).name for p in frame_paths),
        files=files,
    )
    manifest.save(out_dir)
    return manifest
