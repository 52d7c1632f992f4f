"""Temporally stabilized pseudo-labels for unlabeled video.

Candidate boxes come from patch-feature spectral clustering with
cross-backbone mask voting; a motion-guided temporal window then warps,
fuses, and refines them into stable per-frame pseudo-labels, with
distillation loss kernels, feature aggregation, a mask-track baseline,
and box-level evaluation alongside.
"""

from .geometry import BBox, BoxSource, Candidate, FrameRef, clamp_box, iou, nms, top_k
from .flow import FlowField, FlowParams, estimate_flow, mean_flow_in_box, warp_box
from .extraction import ExtractionParams, FeatureMap, extract_candidates, ncut_second_eigenvector
from .stabilization import StabilizationParams, stabilize_frame, stabilize_sequence
from .distill import DistillSample, LossBreakdown, LrSchedule, distill_loss, loss_gradients
from .selsa import AggregationBatch, selsa_affinity, selsa_aggregate
from .videocut import VideocutParams, videocut_sequence
from .evaluation import MetricReport, ap_range, average_precision, average_recall, center_jitter
from .labels import Label, PseudoLabelSet, load_labels, save_labels
from .synthetic import RectSpec, SyntheticScene, generate_synthetic
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AggregationBatch",
    "BBox",
    "BoxSource",
    "Candidate",
    "DistillSample",
    "ExtractionParams",
    "FeatureMap",
    "FlowField",
    "FlowParams",
    "FrameRef",
    "Label",
    "LossBreakdown",
    "LrSchedule",
    "MetricReport",
    "PseudoLabelSet",
    "RectSpec",
    "StabilizationParams",
    "SyntheticScene",
    "VideocutParams",
    "ap_range",
    "average_precision",
    "average_recall",
    "center_jitter",
    "clamp_box",
    "distill_loss",
    "estimate_flow",
    "extract_candidates",
    "generate_synthetic",
    "iou",
    "load_labels",
    "loss_gradients",
    "mean_flow_in_box",
    "ncut_second_eigenvector",
    "nms",
    "run_pipeline",
    "save_labels",
    "selsa_affinity",
    "selsa_aggregate",
    "stabilize_frame",
    "stabilize_sequence",
    "top_k",
    "videocut_sequence",
    "warp_box",
]
