"""In-process bindings for the entitytk toolkit.

Training pipelines call ``evaluate``, ``convert``, and ``resolve`` directly
on in-memory arrays or on the toolkit's file formats; reports are
numerically identical to the CLI because both delegate to the same
evaluator. Toolkit error categories are re-exported so callers can catch
typed exceptions without importing the core package.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from entitytk.annotations import (
    EntityDataset,
    ImageRecord,
    convert_panoptic,
    load_dataset,
    save_dataset,
)
from entitytk.errors import (
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
from entitytk.evaluation import (
    EvalConfig,
    ScoredBox,
    ap_box,
    ap_entity,
    ap_overlap_tolerant,
    pq,
)
from entitytk.masks import Bbox, RleMask, bbox_of, rle_decode
from entitytk.predictions import (
    load_raw_predictions,
    load_resolved,
    raw_to_scored,
    resolve_raw,
    save_resolved,
)
from entitytk.resolver import ResolvedPrediction, ScoredEntity

__version__ = "0.1.0"

__all__ = [
    "BindingSession",
    "evaluate",
    "convert",
    "resolve",
    "EvalConfig",
    # mirrored error categories
    "ToolkitError", "ShapeError", "FormatError", "DomainError", "ValidationError",
    "ConstraintError", "IngestionError", "IntegrityError", "ConfigError",
    "EmptyMaskError",
]

_CONFIG_KEYS = {"iou_thresholds", "recall_points", "max_dets_per_image", "size_buckets", "mode"}


def _eval_config(config: dict) -> EvalConfig:
    kwargs = {k: v for k, v in config.items() if k in _CONFIG_KEYS}
    if "iou_thresholds" in kwargs:
        kwargs["iou_thresholds"] = tuple(float(t) for t in kwargs["iou_thresholds"])
    if "max_dets" in config:  # CLI flag spelling
        kwargs["max_dets_per_image"] = int(config["max_dets"])
    return EvalConfig(**kwargs)


def _as_dataset(gt) -> EntityDataset:
    """Accept an EntityDataset, a dataset JSON path, or in-memory records."""
    if isinstance(gt, EntityDataset):
        return gt
    if isinstance(gt, (str, Path)):
        return load_dataset(gt)
    if isinstance(gt, (list, tuple)):
        return EntityDataset(images=tuple(ImageRecord.from_dict(o) for o in gt))
    if isinstance(gt, dict) and "images" in gt:
        return EntityDataset(
            images=tuple(ImageRecord.from_dict(o) for o in gt["images"])
        )
    raise FormatError(f"cannot interpret ground truth of type {type(gt).__name__}")


def _as_resolved(value) -> ResolvedPrediction:
    if isinstance(value, ResolvedPrediction):
        return value
    if isinstance(value, dict) and "ids" in value:
        ids = np.asarray(value["ids"], dtype=np.int64)
        scores = {int(k): float(v) for k, v in value["scores"].items()}
        scores.setdefault(0, 0.0)
        categories = value.get("categories")
        if categories is not None:
            categories = {int(k): int(v) for k, v in categories.items()}
        return ResolvedPrediction(ids=ids, scores=scores, categories=categories)
    raise FormatError(
        "a resolved prediction needs 'ids' and 'scores' (or a ResolvedPrediction)"
    )


def _as_scored_list(value) -> list[ScoredEntity]:
    out = []
    for i, obj in enumerate(value, start=1):
        if isinstance(obj, ScoredEntity):
            out.append(obj)
            continue
        if "rle" in obj:
            mask = rle_decode(RleMask.from_dict(obj["rle"]))
        elif "mask" in obj:
            mask = np.asarray(obj["mask"], dtype=bool)
        else:
            raise FormatError(f"prediction entity {i} has neither 'mask' nor 'rle'")
        probs = obj.get("pixel_probs")
        if probs is not None:
            probs = np.asarray(probs, dtype=np.float64)
        out.append(
            ScoredEntity(
                entity_id=int(obj.get("entity_id", i)),
                mask=mask,
                score=float(obj["score"]),
                pixel_probs=probs,
                category=obj.get("category"),
            )
        )
    return out


def _as_boxes(value) -> list[ScoredBox]:
    out = []
    for obj in value:
        if isinstance(obj, ScoredBox):
            out.append(obj)
            continue
        if "bbox" in obj:
            bbox = Bbox.from_list(obj["bbox"])
        elif "rle" in obj:
            bbox = bbox_of(rle_decode(RleMask.from_dict(obj["rle"])))
        elif "mask" in obj:
            bbox = bbox_of(np.asarray(obj["mask"], dtype=bool))
        else:
            raise FormatError("a box detection needs 'bbox', 'rle', or 'mask'")
        out.append(
            ScoredBox(bbox=bbox, score=float(obj["score"]), category=obj.get("category"))
        )
    return out


def _predictions_from_path(path: Path, metric: str):
    if path.is_dir():
        loaded = load_resolved(path)
        return {image_id: pred for image_id, (_, _, pred) in loaded.items()}
    raws = load_raw_predictions(path)
    if metric == "box":
        out = {}
        for raw in raws:
            out[raw.image_id] = [
                ScoredBox(
                    bbox=e.bbox if e.bbox is not None else bbox_of(rle_decode(e.rle)),
                    score=e.final_score(),
                    category=e.category,
                )
                for e in raw.entities
            ]
        return out
    return {raw.image_id: raw_to_scored(raw) for raw in raws}


@dataclass(frozen=True)
class BindingSession:
    """An immutable loaded dataset plus an evaluation configuration.

    Sessions over different datasets are fully independent, and one session
    may serve concurrent evaluate() calls.
    """

    dataset: EntityDataset
    config: EvalConfig

    @classmethod
    def load(cls, gt, **config) -> "BindingSession":
        return cls(dataset=_as_dataset(gt), config=_eval_config(config))

    def evaluate(self, predictions, metric: str = "entity", threads: int = 1) -> dict:
        """Run one metric; returns the same mapping the CLI report embeds."""
        if isinstance(predictions, (str, Path)):
            predictions = _predictions_from_path(Path(predictions), metric)
        if metric == "entity":
            converted = {}
            for k, v in predictions.items():
                if isinstance(v, ResolvedPrediction):
                    converted[k] = v
                elif isinstance(v, list):
                    converted[k] = v if _is_scored_list(v) else _as_scored_list(v)
                else:
                    converted[k] = _as_resolved(v)
            report = ap_entity(converted, self.dataset, self.config, threads)
        elif metric == "tolerant":
            converted = {}
            for k, v in predictions.items():
                if isinstance(v, ResolvedPrediction):
                    raise FormatError(
                        "metric 'tolerant' expects scored mask lists, not resolved maps"
                    )
                converted[k] = _as_scored_list(v) if not _is_scored_list(v) else v
            report = ap_overlap_tolerant(converted, self.dataset, self.config, threads)
        elif metric == "box":
            converted = {k: _as_boxes(v) for k, v in predictions.items()}
            report = ap_box(converted, self.dataset, self.config, threads)
        elif metric == "pq":
            converted = {k: _as_resolved(v) for k, v in predictions.items()}
            report = pq(converted, self.dataset)
        else:
            raise ConfigError(f"unknown metric {metric!r}")
        return report.to_dict()


def _is_scored_list(value) -> bool:
    return isinstance(value, list) and all(isinstance(e, ScoredEntity) for e in value)


def evaluate(gt, predictions, metric: str = "entity", **config) -> dict:
    """One-shot evaluation; see BindingSession for the reusable form.

    ``gt`` is a dataset path, an EntityDataset, or in-memory image records;
    ``predictions`` are in-memory per-image mappings (ID arrays + score
    tables, scored mask lists, or box lists) or a prediction path. Keyword
    configuration mirrors the CLI flags.
    """
    threads = int(config.pop("threads", 1))
    session = BindingSession.load(gt, **config)
    return session.evaluate(predictions, metric=metric, threads=threads)


def convert(panoptic_json, png_dir, source_tag: str | None = None, out=None) -> EntityDataset:
    """Panoptic annotations -> in-memory entity dataset (optionally saved).

    Writing through ``out`` produces the same bytes as the CLI convert
    subcommand on the same inputs.
    """
    dataset = convert_panoptic(panoptic_json, png_dir, source_tag)
    if out is not None:
        save_dataset(dataset, out)
    return dataset


def resolve(predictions, nms_threshold: float | None = None, out=None) -> dict:
    """Raw scored masks -> non-overlapping maps per image.

    ``predictions`` is a raw prediction JSON path or a list of per-image
    dicts in the same schema. Returns {image_id: {"ids", "scores",
    "categories"?}}; ``out`` additionally writes a resolved directory
    byte-identical to the CLI resolve subcommand.
    """
    if isinstance(predictions, (str, Path)):
        raws = load_raw_predictions(predictions)
    else:
        from entitytk.predictions import RawEntity, RawPrediction

        raws = []
        for img in predictions:
            entities = tuple(
                RawEntity(
                    entity_id=int(e["entity_id"]),
                    rle=RleMask.from_dict(e["rle"]),
                    score=e.get("score"),
                    entityness=e.get("entityness"),
                    centerness=e.get("centerness"),
                    pixel_probs=None if e.get("pixel_probs") is None else tuple(e["pixel_probs"]),
                    category=e.get("category"),
                    bbox=None if e.get("bbox") is None else Bbox.from_list(e["bbox"]),
                )
                for e in img.get("entities", [])
            )
            raws.append(
                RawPrediction(
                    image_id=int(img["image_id"]),
                    height=int(img["height"]),
                    width=int(img["width"]),
                    entities=entities,
                )
            )
    resolved = [
        (raw.image_id, raw.height, raw.width, resolve_raw(raw, nms_threshold))
        for raw in raws
    ]
    if out is not None:
        save_resolved(resolved, out)
    output = {}
    for image_id, _, _, pred in resolved:
        entry = {"ids": pred.ids, "scores": dict(pred.scores)}
        if pred.categories is not None:
            entry["categories"] = dict(pred.categories)
        output[image_id] = entry
    return output
