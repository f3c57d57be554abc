"""Category-agnostic segmentation evaluation and dataset toolkit."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConstraintError,
    DomainError,
    EmptyMaskError,
    FormatError,
    IngestionError,
    IntegrityError,
    ShapeError,
    ToolkitError,
    ValidationError,
)
from .masks import (
    Bbox,
    RleMask,
    bbox_of,
    box_iou,
    entity_map_compose,
    entity_map_decompose,
    mask_area,
    mask_iou,
    rle_decode,
    rle_encode,
)
from .annotations import (
    EntityDataset,
    EntityRecord,
    ImageRecord,
    PanopticSegment,
    convert_panoptic,
    load_dataset,
    merge_datasets,
    presample,
    save_dataset,
)
from .resolver import (
    Detection,
    ResolvedPrediction,
    ScoredEntity,
    aggregate_score,
    box_nms,
    resolve_overlaps,
    validate_prediction,
)
from .evaluation import (
    ApReport,
    EvalConfig,
    MatchSet,
    PqReport,
    ScoredBox,
    ap_box,
    ap_entity,
    ap_overlap_tolerant,
    build_match_set,
    match_image,
    pq,
)
from .losses import (
    DEFAULT_PATH_WEIGHTS,
    PATH_CODES,
    KernelSet,
    LayerWeights,
    PathSpec,
    dice_loss,
    dice_loss_grad,
    grad_check,
    kernel_bank_loss,
    mask_head_forward,
    overlap_suppression_grad,
    overlap_suppression_loss,
    representative_kernels,
    total_loss,
)

__all__ = [
    "__version__",
    # errors
    "ToolkitError", "ShapeError", "FormatError", "DomainError", "ValidationError",
    "ConstraintError", "IngestionError", "IntegrityError", "ConfigError", "EmptyMaskError",
    # masks
    "RleMask", "Bbox", "rle_encode", "rle_decode", "mask_area", "mask_iou",
    "bbox_of", "box_iou", "entity_map_decompose", "entity_map_compose",
    # annotations
    "PanopticSegment", "EntityRecord", "ImageRecord", "EntityDataset",
    "convert_panoptic", "merge_datasets", "presample", "load_dataset", "save_dataset",
    # resolver
    "Detection", "ScoredEntity", "ResolvedPrediction", "aggregate_score",
    "box_nms", "resolve_overlaps", "validate_prediction",
    # evaluation
    "EvalConfig", "MatchSet", "ApReport", "PqReport", "ScoredBox",
    "match_image", "build_match_set", "ap_entity", "ap_overlap_tolerant", "ap_box", "pq",
    # losses
    "PATH_CODES", "DEFAULT_PATH_WEIGHTS", "LayerWeights", "PathSpec", "KernelSet",
    "mask_head_forward", "dice_loss", "dice_loss_grad", "kernel_bank_loss",
    "representative_kernels", "overlap_suppression_loss", "overlap_suppression_grad",
    "total_loss", "grad_check",
]
