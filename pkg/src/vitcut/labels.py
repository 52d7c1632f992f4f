"""On-disk pseudo-label schema.

JSON document {version, videos: [{id, width, height, frames: [{index,
labels: [{box: [x1,y1,x2,y2], score, source, mask?, region_id?}]}]}]} with
masks stored as external tensor containers referenced by path relative to
the JSON file. Serialization is canonical (fixed key order, two-space
indent), so write -> read -> write is byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import BBox, BoxSource
from .tensorio import read_tensor

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A label document violates the schema."""


@dataclass(frozen=True, slots=True)
class Label:
    box: BBox
    score: float
    source: BoxSource
    mask_path: str | None = None
    region_id: int | None = None

    def to_dict(self) -> dict:
        d: dict = {
            "box": [self.box.x1, self.box.y1, self.box.x2, self.box.y2],
            "score": self.score,
            "source": self.source.value,
        }
        if self.mask_path is not None:
            d["mask"] = self.mask_path
        if self.region_id is not None:
            d["region_id"] = self.region_id
        return d


@dataclass(slots=True)
class FrameLabels:
    index: int
    labels: list[Label] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"index": self.index, "labels": [l.to_dict() for l in self.labels]}


@dataclass(slots=True)
class VideoLabels:
    id: str
    width: int
    height: int
    frames: list[FrameLabels] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "frames": [f.to_dict() for f in self.frames],
        }


@dataclass(slots=True)
class PseudoLabelSet:
    videos: list[VideoLabels] = field(default_factory=list)
    version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"version": self.version, "videos": [v.to_dict() for v in self.videos]}

    def video(self, video_id: str) -> VideoLabels:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(f"no video {video_id!r} in label set")


def _parse_label(entry: dict, where: str) -> Label:
    try:
        x1, y1, x2, y2 = entry["box"]
        box = BBox(float(x1), float(y1), float(x2), float(y2))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: bad box: {exc}") from exc
    try:
        score = float(entry["score"])
        source = BoxSource(entry["source"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{where}: bad score/source: {exc}") from exc
    if not (0.0 <= score <= 1.0):
        raise SchemaError(f"{where}: score {score} outside [0, 1]")
    mask = entry.get("mask")
    region = entry.get("region_id")
    return Label(
        box=box,
        score=score,
        source=source,
        mask_path=str(mask) if mask is not None else None,
        region_id=int(region) if region is not None else None,
    )


def load_labels(path: str | Path, check_masks: bool = True) -> PseudoLabelSet:
    """Parse and validate a label document.

    With check_masks every referenced mask file must exist next to the
    document and parse as a tensor container.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable label document: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise SchemaError(f"{path}: missing schema version field")
    if doc["version"] != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema version {doc['version']!r}")
    out = PseudoLabelSet(version=doc["version"])
    for vi, video in enumerate(doc.get("videos", [])):
        where = f"{path}: videos[{vi}]"
        try:
            vl = VideoLabels(
                id=str(video["id"]), width=int(video["width"]), height=int(video["height"])
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"{where}: bad video header: {exc}") from exc
        if vl.width <= 0 or vl.height <= 0:
            raise SchemaError(f"{where}: bad frame dims {vl.width}x{vl.height}")
        for fi, frame in enumerate(video.get("frames", [])):
            fwhere = f"{where}.frames[{fi}]"
            try:
                fl = FrameLabels(index=int(frame["index"]))
            except (KeyError, ValueError) as exc:
                raise SchemaError(f"{fwhere}: bad frame index: {exc}") from exc
            for li, entry in enumerate(frame.get("labels", [])):
                label = _parse_label(entry, f"{fwhere}.labels[{li}]")
                if label.box.x1 < 0 or label.box.y1 < 0 or label.box.x2 > vl.width or label.box.y2 > vl.height:
                    raise SchemaError(f"{fwhere}.labels[{li}]: box not clamped to frame")
                if check_masks and label.mask_path is not None:
                    mask_file = path.parent / label.mask_path
                    if not mask_file.is_file():
                        raise SchemaError(f"{fwhere}.labels[{li}]: missing mask {label.mask_path}")
                    try:
                        read_tensor(mask_file)
                    except Exception as exc:
                        raise SchemaError(
                            f"{fwhere}.labels[{li}]: unparsable mask {label.mask_path}: {exc}"
                        ) from exc
                fl.labels.append(label)
            vl.frames.append(fl)
        out.videos.append(vl)
    return out


def dump_labels(labels: PseudoLabelSet) -> str:
    return json.dumps(labels.to_dict(), indent=2) + "\n"


def save_labels(path: str | Path, labels: PseudoLabelSet) -> None:
    Path(path).write_text(dump_labels(labels))
