"""Prediction wire formats and the resolve pipeline.

Two on-disk forms exist:

* raw (overlap-tolerant) JSON: per image a list of
  ``{entity_id, rle, score, pixel_probs?, entityness?, centerness?,
  category?, bbox?}``; ``pixel_probs`` values align with the column-major
  order of the mask's set pixels.
* resolved directory: one ID PNG per image (R + 256*G + 256**2*B) plus a
  ``scores.json`` table; this form is non-overlapping by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import decode_id_png, encode_id_png
from .errors import FormatError
from .masks import Bbox, RleMask, bbox_of, entity_map_decompose, rle_decode, rle_encode
from .resolver import (
    DEFAULT_NMS_THRESHOLD,
    ResolvedPrediction,
    ScoredEntity,
    aggregate_score,
    greedy_box_keep,
    resolve_overlaps,
)

__all__ = [
    "RawEntity",
    "RawPrediction",
    "load_raw_predictions",
    "save_raw_predictions",
    "raw_to_scored",
    "resolve_raw",
    "save_resolved",
    "load_resolved",
    "resolved_to_raw",
    "SCORES_FILE",
]

SCORES_FILE = "scores.json"


@dataclass(frozen=True)
class RawEntity:
    entity_id: int
    rle: RleMask | None
    score: float | None = None
    entityness: float | None = None
    centerness: float | None = None
    pixel_probs: tuple[float, ...] | None = None
    category: int | None = None
    bbox: Bbox | None = None

    def final_score(self) -> float:
        """Stored score, or the aggregate of entityness and centerness."""
        if self.score is not None:
            return float(self.score)
        if self.entityness is not None and self.centerness is not None:
            return aggregate_score(self.entityness, self.centerness)
        raise FormatError(
            f"entity {self.entity_id} has neither a score nor an "
            "entityness/centerness pair"
        )

    def has_detection_scores(self) -> bool:
        return self.entityness is not None and self.centerness is not None


@dataclass(frozen=True)
class RawPrediction:
    image_id: int
    height: int
    width: int
    entities: tuple[RawEntity, ...]


def _entity_from_dict(obj: dict) -> RawEntity:
    try:
        return RawEntity(
            entity_id=int(obj["entity_id"]),
            rle=RleMask.from_dict(obj["rle"]) if "rle" in obj else None,
            score=None if obj.get("score") is None else float(obj["score"]),
            entityness=None if obj.get("entityness") is None else float(obj["entityness"]),
            centerness=None if obj.get("centerness") is None else float(obj["centerness"]),
            pixel_probs=None if obj.get("pixel_probs") is None else tuple(obj["pixel_probs"]),
            category=None if obj.get("category") is None else int(obj["category"]),
            bbox=None if obj.get("bbox") is None else Bbox.from_list(obj["bbox"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed prediction entity: {obj!r}") from exc


def load_raw_predictions(path) -> list[RawPrediction]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        images = obj["images"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing 'images' list") from exc
    out = []
    for img in images:
        try:
            out.append(
                RawPrediction(
                    image_id=int(img["image_id"]),
                    height=int(img["height"]),
                    width=int(img["width"]),
                    entities=tuple(_entity_from_dict(e) for e in img.get("entities", [])),
                )
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed prediction image: {exc}") from exc
    return out


def save_raw_predictions(preds: list[RawPrediction], path) -> None:
    images = []
    for p in preds:
        entities = []
        for e in p.entities:
            obj: dict = {"entity_id": e.entity_id, "rle": e.rle.to_dict()}
            if e.score is not None:
                obj["score"] = e.score
            if e.entityness is not None:
                obj["entityness"] = e.entityness
            if e.centerness is not None:
                obj["centerness"] = e.centerness
            if e.pixel_probs is not None:
                obj["pixel_probs"] = list(e.pixel_probs)
            if e.category is not None:
                obj["category"] = e.category
            if e.bbox is not None:
                obj["bbox"] = e.bbox.to_list()
            entities.append(obj)
        images.append(
            {
                "image_id": p.image_id,
                "height": p.height,
                "width": p.width,
                "entities": entities,
            }
        )
    Path(path).write_text(json.dumps({"images": images}, separators=(",", ":")) + "\n")


def _probs_map(mask: np.ndarray, values: tuple[float, ...], entity_id: int) -> np.ndarray:
    n_set = int(np.count_nonzero(mask))
    if len(values) != n_set:
        raise FormatError(
            f"entity {entity_id}: {len(values)} pixel_probs for {n_set} mask pixels"
        )
    probs = np.zeros(mask.shape)
    probs.T[mask.T] = values  # column-major fill matches the RLE pixel order
    return probs


def raw_to_scored(pred: RawPrediction) -> list[ScoredEntity]:
    """Materialize a raw prediction as scored entities."""
    out = []
    for e in pred.entities:
        if e.rle is None:
            raise FormatError(f"entity {e.entity_id} has no mask")
        if (e.rle.height, e.rle.width) != (pred.height, pred.width):
            raise FormatError(
                f"image {pred.image_id}: entity {e.entity_id} RLE size "
                f"{(e.rle.height, e.rle.width)} != image size "
                f"{(pred.height, pred.width)}"
            )
        mask = rle_decode(e.rle)
        probs = None
        if e.pixel_probs is not None:
            probs = _probs_map(mask, e.pixel_probs, e.entity_id)
        out.append(
            ScoredEntity(
                entity_id=e.entity_id,
                mask=mask,
                score=e.final_score(),
                pixel_probs=probs,
                category=e.category,
            )
        )
    return out


def resolve_raw(pred: RawPrediction, nms_threshold: float | None = None) -> ResolvedPrediction:
    """Score-aggregate, box-NMS, and overlap-resolve one image.

    Box NMS runs when the input carries detector-stage entityness and
    centerness scores, or when a threshold is passed explicitly; detections
    without localization boxes use the tight box of their mask. Re-running
    on already-resolved output (plain scores, no threshold) is therefore a
    pure overlap resolution, which is idempotent.
    """
    entities = raw_to_scored(pred)
    run_nms = nms_threshold is not None or any(
        e.has_detection_scores() for e in pred.entities
    )
    if run_nms and entities:
        threshold = DEFAULT_NMS_THRESHOLD if nms_threshold is None else nms_threshold
        boxes = []
        for raw, ent in zip(pred.entities, entities):
            boxes.append(raw.bbox if raw.bbox is not None else bbox_of(ent.dense_mask()))
        keep = sorted(greedy_box_keep(boxes, [e.score for e in entities], threshold))
        entities = [entities[i] for i in keep]
    return resolve_overlaps(entities, pred.height, pred.width)


def save_resolved(resolved: list[tuple[int, int, int, ResolvedPrediction]], out_dir) -> None:
    """Write (image_id, height, width, prediction) tuples as PNGs + scores.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = []
    for image_id, height, width, pred in resolved:
        file_name = f"{image_id:012d}.png"
        ids = pred.ids
        if ids.shape != (height, width):
            raise FormatError(
                f"image {image_id}: map shape {ids.shape} != ({height}, {width})"
            )
        encode_id_png(ids, out_dir / file_name)
        entry = {
            "image_id": image_id,
            "height": height,
            "width": width,
            "file_name": file_name,
            "scores": {str(k): v for k, v in sorted(pred.scores.items())},
        }
        if pred.categories is not None:
            entry["categories"] = {str(k): v for k, v in sorted(pred.categories.items())}
        table.append(entry)
    (out_dir / SCORES_FILE).write_text(
        json.dumps({"images": table}, separators=(",", ":")) + "\n"
    )


def load_resolved(in_dir) -> dict[int, tuple[int, int, ResolvedPrediction]]:
    """Read a resolved-prediction directory; image_id -> (h, w, prediction)."""
    in_dir = Path(in_dir)
    scores_path = in_dir / SCORES_FILE
    if not scores_path.exists():
        raise FormatError(f"{in_dir}: missing {SCORES_FILE}")
    try:
        table = json.loads(scores_path.read_text())["images"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{scores_path}: malformed scores file: {exc}") from exc
    out = {}
    for entry in table:
        try:
            image_id = int(entry["image_id"])
            height = int(entry["height"])
            width = int(entry["width"])
            ids = decode_id_png(in_dir / entry["file_name"])
            scores = {int(k): float(v) for k, v in entry["scores"].items()}
            categories = None
            if "categories" in entry:
                categories = {int(k): int(v) for k, v in entry["categories"].items()}
        except (KeyError, TypeError, FileNotFoundError) as exc:
            raise FormatError(f"{in_dir}: malformed resolved entry: {exc}") from exc
        if ids.shape != (height, width):
            raise FormatError(
                f"image {image_id}: PNG shape {ids.shape} != ({height}, {width})"
            )
        out[image_id] = (
            height,
            width,
            ResolvedPrediction(ids=ids, scores=scores, categories=categories),
        )
    return out


def resolved_to_raw(image_id: int, height: int, width: int, pred: ResolvedPrediction) -> RawPrediction:
    """Decompose a resolved prediction back into raw scored entities."""
    entities = []
    for entity_id, mask in entity_map_decompose(pred.ids):
        entities.append(
            RawEntity(
                entity_id=entity_id,
                rle=rle_encode(mask),
                score=pred.scores[entity_id],
                category=None if pred.categories is None else pred.categories.get(entity_id),
            )
        )
    return RawPrediction(image_id=image_id, height=height, width=width, entities=tuple(entities))
