"""Single-file JSON configuration with full defaults.

A config file may override any subset of keys; unknown keys are rejected
so typos fail loudly. The configuration hash covers everything except
execution details (worker count), so runs that differ only in parallelism
produce identical manifests.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .extraction import ExtractionParams
from .flow import FlowParams
from .stabilization import StabilizationParams
from .videocut import VideocutParams


class ConfigError(ValueError):
    """Invalid configuration file or value."""


DEFAULT_CONFIG: dict[str, Any] = {
    "dataset_root": ".",
    "seed": 0,
    "workers": 1,
    "stages": ["flow", "extract", "stabilize", "eval"],
    "videos": [],
    "backbones": ["lum8"],
    "patch_size": 8,
    "flow": {
        "pyramid_scale": 0.5,
        "levels": 3,
        "window_size": 15,
        "iterations": 3,
        "poly_n": 5,
        "poly_sigma": 1.1,
    },
    "extraction": {
        "clusters": 4,
        "eig_weight": 1.0,
        "min_patches": 2,
        "vote_iou": 0.6,
        "consensus": 0.5,
        "keep_top": 150,
        "min_score": 0.0,
        "nms_iou": None,
        "corner_rule": True,
        "corner_min": 3,
        "seed": 0,
    },
    "stabilization": {
        "window_radius": 3,
        "iou_group": 0.7,
        "iou_keep": 0.6,
        "iou_add": 0.7,
        "min_group_size": 3,
        "fusion": "enclosing",
    },
    "videocut": {
        "gate_iou": 0.3,
        "mag_threshold": 0.5,
        "streak_needed": 3,
        "assoc_iou": 0.5,
    },
    "selsa": {"temperature": 1.0},
    "distill": {
        "teacher_threshold": 0.7,
        "schedule": {
            "peak": 2e-4,
            "floor": 1e-6,
            "warmup": 5.0,
            "restart": 20.0,
            "total": 40.0,
        },
    },
    "evaluation": {
        "pred": "stabilized",
        "det_cap": 100,
        "large_area": 9216.0,
        "jitter_min_iou": 0.1,
    },
    "synthetic": {
        "width": 192,
        "height": 144,
        "length": 20,
        "rectangles": [
            {"size": [40, 32], "velocity": [4.0, 1.5], "phase": 0.2},
            {"size": [36, 42], "velocity": [-3.0, 2.5], "phase": 0.7},
        ],
        "noise": {"jitter_sigma": 0.0, "dropout": 0.0, "spurious_rate": 0.0},
    },
}

_STAGE_ORDER = ("synth", "flow", "extract", "stabilize", "videocut", "eval")


def _merge(base: dict, override: dict, trail: str) -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{trail}.{key}" if trail else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Merge a config file (then explicit overrides) over the defaults."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        cfg = _merge(cfg, doc, "")
    if overrides:
        for key, value in overrides.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = value
    validate_config(cfg)
    return cfg


def flow_params(cfg: dict) -> FlowParams:
    return FlowParams(**cfg["flow"])


def extraction_params(cfg: dict) -> ExtractionParams:
    return ExtractionParams(**cfg["extraction"])


def stabilization_params(cfg: dict) -> StabilizationParams:
    return StabilizationParams(**cfg["stabilization"])


def videocut_params(cfg: dict) -> VideocutParams:
    return VideocutParams(**cfg["videocut"])


def validate_config(cfg: dict) -> None:
    try:
        flow_params(cfg).validate()
        extraction_params(cfg).validate()
        stabilization_params(cfg).validate()
        videocut_params(cfg).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError(f"workers must be a positive integer, got {cfg['workers']!r}")
    if not isinstance(cfg["patch_size"], int) or cfg["patch_size"] < 1:
        raise ConfigError(f"patch_size must be a positive integer, got {cfg['patch_size']!r}")
    for stage in cfg["stages"]:
        if stage not in _STAGE_ORDER:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {_STAGE_ORDER}")
    if not cfg["backbones"]:
        raise ConfigError("at least one backbone name is required")
    if cfg["selsa"]["temperature"] <= 0:
        raise ConfigError("selsa.temperature must be positive")
    ev = cfg["evaluation"]
    if ev["det_cap"] < 1:
        raise ConfigError("evaluation.det_cap must be >= 1")
    if ev["pred"] not in ("candidates", "stabilized", "videocut"):
        raise ConfigError(f"evaluation.pred must name a pipeline output, got {ev['pred']!r}")
    syn = cfg["synthetic"]
    if syn["width"] < 16 or syn["height"] < 16 or syn["length"] < 1:
        raise ConfigError("synthetic scene must be at least 16x16 with length >= 1")
    for i, rect in enumerate(syn["rectangles"]):
        missing = {"size", "velocity", "phase"} - set(rect)
        if missing:
            raise ConfigError(f"synthetic.rectangles[{i}] missing {sorted(missing)}")
    noise = syn["noise"]
    if noise["jitter_sigma"] < 0 or not (0.0 <= noise["dropout"] <= 1.0) or noise["spurious_rate"] < 0:
        raise ConfigError("synthetic.noise values out of range")


def ordered_stages(requested: list[str]) -> list[str]:
    """Requested stages in canonical pipeline order, duplicates removed."""
    want = set(requested)
    return [s for s in _STAGE_ORDER if s in want]


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


_EXECUTION_KEYS = ("workers", "dataset_root")


def config_hash(cfg: dict) -> str:
    """Hash of the semantic configuration.

    Worker count and dataset location are execution details, not
    semantics: runs that differ only in those produce identical outputs
    and must produce identical manifests.
    """
    semantic = {k: v for k, v in cfg.items() if k not in _EXECUTION_KEYS}
    return hashlib.sha256(canonical_json(semantic).encode()).hexdigest()
