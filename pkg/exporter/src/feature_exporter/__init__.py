"""Feature and teacher-mask exporter for the video pseudo-label pipeline.

Bridges real data into the pipeline's binary tensor container: per-frame
backbone feature grids and box-prompted teacher masks, each export sealed
by a manifest of SHA-256 checksums written after all tensor files.
"""

from .backbones import ModelLoadError, get_backbone
from .container import DecodeError
from .export import export_features, export_teacher_masks
from .manifest import ExportManifest, ManifestError, load_manifest, verify_dir
from .teacher import get_teacher

__all__ = [
    "DecodeError",
    "ExportManifest",
    "ManifestError",
    "ModelLoadError",
    "export_features",
    "export_teacher_masks",
    "get_backbone",
    "get_teacher",
    "load_manifest",
    "verify_dir",
]
