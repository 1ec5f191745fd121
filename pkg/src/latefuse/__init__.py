"""latefuse: score-level late fusion and temporal localization for AI-video forensics.

Aligns heterogeneous per-branch score streams (multi-resolution audio, sliding
window visual, sparse semantic) onto a common 40 ms token grid, trains a
linear fusion head over the stacked logits, localizes fake segments, and
scores everything with AUC / EER / AP / AR.
"""

from .align import (
    AlignedStream,
    BranchAligner,
    FusedSequence,
    ScoreStream,
    align_video,
    repeat_upsample,
    select_resolutions,
    sparse_densify,
    stack_fused,
    to_token_grid,
    window_densify,
)
from .fusion import (
    FusionClassifier,
    OneCycleSchedule,
    PrototypeScorer,
    bce_loss,
    lr_at,
    p2sgrad_gradient,
    p2sgrad_loss,
    softmax_probabilities,
)
from .localize import DetectionResult, Proposal, detect_video, proposals_to_mask, propose_segments
from .metrics import (
    MetricsReport,
    average_precision,
    average_recall_at,
    compute_report,
    eer,
    iou,
    roc_auc,
    segment_auc,
)
from .synthgen import ScenarioConfig, generate, scenario_of
from .timeline import (
    FakeSegment,
    GroundTruth,
    TokenGrid,
    frame_to_token_map,
    frames_in_clip,
    rasterize_labels,
    video_label_of,
)

__version__ = "0.1.0"

__all__ = [
    "AlignedStream",
    "BranchAligner",
    "DetectionResult",
    "FakeSegment",
    "FusedSequence",
    "FusionClassifier",
    "GroundTruth",
    "MetricsReport",
    "OneCycleSchedule",
    "Proposal",
    "PrototypeScorer",
    "ScenarioConfig",
    "ScoreStream",
    "TokenGrid",
    "align_video",
    "average_precision",
    "average_recall_at",
    "bce_loss",
    "compute_report",
    "detect_video",
    "eer",
    "frame_to_token_map",
    "frames_in_clip",
    "generate",
    "iou",
    "lr_at",
    "p2sgrad_gradient",
    "p2sgrad_loss",
    "proposals_to_mask",
    "propose_segments",
    "rasterize_labels",
    "repeat_upsample",
    "roc_auc",
    "scenario_of",
    "segment_auc",
    "select_resolutions",
    "softmax_probabilities",
    "sparse_densify",
    "stack_fused",
    "to_token_grid",
    "video_label_of",
    "window_densify",
]
