"""Export manifest: what was written, where, and its checksums.

The manifest is the completion marker. It is written only after every
listed file is on disk, so a manifest whose checksums verify is proof the
export finished intact; any interrupted or corrupted run fails
verification instead of passing silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .container import sha256_file

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ManifestError(Exception):
    """Manifest parsing or verification failure."""


@dataclass(frozen=True)
class ExportManifest:
    """kind: "features" or "teacher-masks". backbones: the model ids used
    (the teacher id for mask exports). patch_size: pixels per patch side
    for features; the mask grid side for teacher masks. files: output path
    relative to the manifest's directory -> SHA-256 of the file bytes."""

    kind: str
    backbones: tuple[str, ...]
    patch_size: int
    frames: tuple[str, ...]
    files: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "version": MANIFEST_VERSION,
            "kind": self.kind,
            "backbones": list(self.backbones),
            "patch_size": self.patch_size,
            "frames": list(self.frames),
            "files": dict(sorted(self.files.items())),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(self.to_json())
        return path

    def verify(self, root: str | Path) -> None:
        """Raise ManifestError on the first missing or altered file."""
        root = Path(root)
        for rel, want in sorted(self.files.items()):
            path = root / rel
            if not path.is_file():
                raise ManifestError(f"listed file missing: {rel}")
            got = sha256_file(path)
            if got != want:
                raise ManifestError(f"checksum mismatch for {rel}: {got} != {want}")


def load_manifest(path: str | Path) -> ExportManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    try:
        return ExportManifest(
            kind=str(doc["kind"]),
            backbones=tuple(str(b) for b in doc["backbones"]),
            patch_size=int(doc["patch_size"]),
            frames=tuple(str(f) for f in doc["frames"]),
            files={str(k): str(v) for k, v in doc["files"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from exc


def verify_dir(out_dir: str | Path) -> ExportManifest:
    """Load <out_dir>/manifest.json and verify every listed checksum."""
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir / MANIFEST_NAME)
    manifest.verify(out_dir)
    return manifest
