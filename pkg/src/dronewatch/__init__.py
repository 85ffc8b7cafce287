"""dronewatch: drone-monitoring pipeline toolkit.

Synthetic data augmentation with automatic bounding boxes, residual-frame
preprocessing, pluggable detector/tracker baselines, confidence-fusion
monitoring, and detection/tracking evaluation metrics.
"""

from .augment import (
    AnnotatedSample,
    AugmentationPolicy,
    ForegroundAsset,
    composite_sample,
    generate_dataset,
    simulate_sequence,
)
from .evaluate import Curve, compare_runs, iou, pr_curve, success_curve
from .fusion import (
    FusionCandidate,
    FusionDecision,
    FusionParams,
    MonitorState,
    calibrate,
    fuse,
    monitor_step,
    run_monitor,
    select_candidate,
)
from .imaging import (
    AffineTransform,
    BBox,
    ImageBuffer,
    bbox_intersection_area,
    bbox_union_area,
    read_image,
    rescale_shorter_side,
    write_png,
)
from .plugins import (
    ExternalDetector,
    ExternalTracker,
    ResidualBlobTracker,
    ScoredBox,
    TemplateDetector,
)
from .residual import TranslationEstimate, estimate_translation, residual_frame, residual_sequence

__version__ = "0.1.0"

__all__ = [
    "AffineTransform",
    "AnnotatedSample",
    "AugmentationPolicy",
    "BBox",
    "Curve",
    "ExternalDetector",
    "ExternalTracker",
    "ForegroundAsset",
    "FusionCandidate",
    "FusionDecision",
    "FusionParams",
    "ImageBuffer",
    "MonitorState",
    "ResidualBlobTracker",
    "ScoredBox",
    "TemplateDetector",
    "TranslationEstimate",
    "bbox_intersection_area",
    "bbox_union_area",
    "calibrate",
    "compare_runs",
    "composite_sample",
    "estimate_translation",
    "fuse",
    "generate_dataset",
    "iou",
    "monitor_step",
    "pr_curve",
    "read_image",
    "rescale_shorter_side",
    "residual_frame",
    "residual_sequence",
    "run_monitor",
    "select_candidate",
    "simulate_sequence",
    "success_curve",
    "write_png",
]
