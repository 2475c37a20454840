"""Deterministic annotation-noise injection and evaluation for COCO-format detection datasets.

The package has four layers:

* :mod:`unabench.model` - dataset/detection types plus canonical JSON I/O
* :mod:`unabench.noise` - seeded, order-independent noise injection
* :mod:`unabench.metrics` - IoU, greedy matching, interpolated average precision
* :mod:`unabench.tide` - error classification and oracle-based error impact

plus a command-line frontend in :mod:`unabench.cli`.
"""

from .model import (
    Annotation,
    BoundingBox,
    Category,
    Dataset,
    Detection,
    ImageRecord,
    ValidationError,
    parse_dataset,
    parse_detections,
    serialize_dataset,
    validate_dataset,
)
from .noise import (
    BogusSizePolicy,
    CorruptionEntry,
    InjectionLog,
    NoiseConfig,
    NoiseType,
    exact_count,
    inject,
    inject_bogus,
    inject_categorization,
    inject_localization,
    inject_missing,
    inject_una,
    make_bogus_box,
    perturb_box,
    select_targets,
)
from .metrics import (
    IOU_THRESHOLDS,
    EvalSummary,
    MatchResult,
    average_precision,
    evaluate,
    iou,
    match_greedy,
)
from .tide import (
    ErrorAssignment,
    ErrorKind,
    TideReport,
    apply_oracle,
    classify_errors,
    tide_report,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BogusSizePolicy",
    "BoundingBox",
    "Category",
    "CorruptionEntry",
    "Dataset",
    "Detection",
    "ErrorAssignment",
    "ErrorKind",
    "EvalSummary",
    "ImageRecord",
    "InjectionLog",
    "IOU_THRESHOLDS",
    "MatchResult",
    "NoiseConfig",
    "NoiseType",
    "TideReport",
    "ValidationError",
    "apply_oracle",
    "average_precision",
    "classify_errors",
    "evaluate",
    "exact_count",
    "inject",
    "inject_bogus",
    "inject_categorization",
    "inject_localization",
    "inject_missing",
    "inject_una",
    "iou",
    "make_bogus_box",
    "match_greedy",
    "parse_dataset",
    "parse_detections",
    "perturb_box",
    "select_targets",
    "serialize_dataset",
    "tide_report",
    "validate_dataset",
]
