"""Inference-side postprocessing.

Turns a pile of scored, possibly overlapping masks into a valid entity map:
aggregate detection scores, drop near-duplicate detections with box NMS,
then let the highest per-pixel confidence win so each pixel carries exactly
one entity ID.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, ValidationError
from .masks import Bbox, RleMask, as_mask, box_iou, rle_decode

__all__ = [
    "Detection",
    "ScoredEntity",
    "ResolvedPrediction",
    "DEFAULT_NMS_THRESHOLD",
    "aggregate_score",
    "greedy_box_keep",
    "box_nms",
    "resolve_overlaps",
    "validate_prediction",
]

DEFAULT_NMS_THRESHOLD = 0.6


def aggregate_score(entityness: float, centerness: float) -> float:
    """Detection ranking score: sqrt(entityness * centerness)."""
    if not 0.0 <= entityness <= 1.0:
        raise DomainError(f"entityness {entityness} outside [0, 1]")
    if not 0.0 <= centerness <= 1.0:
        raise DomainError(f"centerness {centerness} outside [0, 1]")
    return math.sqrt(entityness * centerness)


@dataclass(frozen=True)
class Detection:
    """One box-level detection before mask resolution.

    ``aggregated_score`` is derived from entityness and centerness when not
    supplied explicitly.
    """

    bbox: Bbox
    entityness: float
    centerness: float
    aggregated_score: float = field(default=-1.0)

    def __post_init__(self):
        expected = aggregate_score(self.entityness, self.centerness)
        if self.aggregated_score < 0:
            object.__setattr__(self, "aggregated_score", expected)
        elif abs(self.aggregated_score - expected) > 1e-12:
            raise DomainError(
                f"aggregated_score {self.aggregated_score} != "
                f"sqrt(entityness*centerness) = {expected}"
            )


def greedy_box_keep(boxes: list[Bbox], scores: list[float], iou_threshold: float) -> list[int]:
    """Indices kept by greedy box NMS, in keep (descending-score) order.

    Boxes are visited by descending score (ties by input index); one is
    kept iff its IoU with every already-kept box is strictly below the
    threshold.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise DomainError(f"NMS threshold {iou_threshold} outside (0, 1]")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(box_iou(boxes[i], boxes[k]) < iou_threshold for k in kept):
            kept.append(i)
    return kept


def box_nms(detections: list[Detection], iou_threshold: float = DEFAULT_NMS_THRESHOLD) -> list[Detection]:
    """Greedy non-maximum suppression over detection boxes."""
    keep = greedy_box_keep(
        [d.bbox for d in detections],
        [d.aggregated_score for d in detections],
        iou_threshold,
    )
    return [detections[i] for i in keep]


@dataclass(frozen=True)
class ScoredEntity:
    """One predicted entity: a mask plus its confidence score.

    ``pixel_probs`` optionally refines the per-pixel confidence on the mask
    support; outside the support it is ignored.
    """

    entity_id: int
    mask: np.ndarray | RleMask
    score: float
    pixel_probs: np.ndarray | None = None
    category: int | None = None

    def __post_init__(self):
        if self.entity_id <= 0:
            raise DomainError(f"entity_id must be positive, got {self.entity_id}")
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"score {self.score} outside [0, 1]")

    def dense_mask(self) -> np.ndarray:
        if isinstance(self.mask, RleMask):
            return rle_decode(self.mask)
        return as_mask(self.mask)


@dataclass(frozen=True)
class ResolvedPrediction:
    """A non-overlapping entity map plus its score table.

    ``scores`` covers every ID present in the map and reserves index 0
    (void) with score 0. ``categories`` is optional metadata used only by
    the category-oriented PQ comparison mode.
    """

    ids: np.ndarray
    scores: dict[int, float]
    categories: dict[int, int] | None = None


def resolve_overlaps(entities: list[ScoredEntity], height: int, width: int) -> ResolvedPrediction:
    """Fuse scored masks into a valid entity map.

    Per pixel, the covering entity with the highest confidence
    (score * pixel_prob, pixel_prob defaulting to 1 on the support) wins;
    ties go to the lower entity ID; uncovered pixels get ID 0. Entities left
    with no pixels are dropped from the score table.
    """
    ids = np.zeros((height, width), dtype=np.int64)
    best = np.full((height, width), -1.0)
    seen: set[int] = set()
    for ent in sorted(entities, key=lambda e: e.entity_id):
        if ent.entity_id in seen:
            raise ValidationError(f"duplicate entity_id {ent.entity_id}")
        seen.add(ent.entity_id)
        mask = ent.dense_mask()
        if mask.shape != (height, width):
            raise ShapeError(
                f"entity {ent.entity_id} mask shape {mask.shape} != {(height, width)}"
            )
        if not mask.any():
            raise ValidationError(f"entity {ent.entity_id} has an empty mask")
        if ent.pixel_probs is not None:
            probs = np.asarray(ent.pixel_probs, dtype=np.float64)
            if probs.shape != (height, width):
                raise ShapeError(
                    f"entity {ent.entity_id} pixel_probs shape {probs.shape} "
                    f"!= {(height, width)}"
                )
            support = probs[mask]
            if support.min() < 0.0 or support.max() > 1.0:
                raise DomainError(
                    f"entity {ent.entity_id} pixel_probs outside [0, 1] on support"
                )
            conf = ent.score * probs
        else:
            conf = ent.score
        # Ascending-ID visit order plus strict > implements the low-ID tie-break.
        win = mask & (np.where(mask, conf, -1.0) > best)
        ids[win] = ent.entity_id
        best[win] = conf[win] if isinstance(conf, np.ndarray) else conf

    surviving = set(np.unique(ids)) - {0}
    scores = {0: 0.0}
    categories = {}
    for ent in entities:
        if ent.entity_id in surviving:
            scores[ent.entity_id] = float(ent.score)
            if ent.category is not None:
                categories[ent.entity_id] = int(ent.category)
    return ResolvedPrediction(ids=ids, scores=scores, categories=categories or None)


def validate_prediction(pred: ResolvedPrediction) -> None:
    """Check the resolved-prediction contract; raises ValidationError.

    Every nonzero ID in the map must have a score in [0, 1] and index 0
    must be reserved for void with score 0. Any resolve_overlaps output
    passes by construction.
    """
    if pred.scores.get(0) != 0.0:
        raise ValidationError("score table must reserve index 0 with score 0")
    for entity_id in np.unique(pred.ids):
        entity_id = int(entity_id)
        if entity_id == 0:
            continue
        if entity_id not in pred.scores:
            raise ValidationError(f"entity {entity_id} has no score entry")
    for entity_id, score in pred.scores.items():
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"entity {entity_id} score {score} outside [0, 1]")
