"""Segmentation metrics over entity datasets.

Four evaluators share one matching/accumulation engine:

* ``ap_entity``      - strict mask AP; rejects any overlapping prediction.
* ``ap_overlap_tolerant`` - the same AP over raw, possibly overlapping masks.
* ``ap_box``         - box AP, category-agnostic or category-oriented.
* ``pq``             - panoptic quality for category-carrying predictions.

AP follows the COCO protocol: IoU thresholds 0.50..0.95 (step 0.05),
greedy score-ordered matching, dataset-wide pooling, monotone precision
envelope sampled at 101 evenly spaced recall points. PQ matches at IoU
strictly above 0.5 per category. Ground-truth void pixels are removed from
the prediction operand before any mask IoU.

Every reduction is an ordered, deterministic fold, so reports are
bit-identical regardless of the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .annotations import EntityDataset, ImageRecord
from .errors import ConfigError, ConstraintError, ShapeError, ValidationError
from .masks import Bbox, as_entity_map, as_mask, box_iou, iou_from_counts
from .resolver import ResolvedPrediction, ScoredEntity, validate_prediction

__all__ = [
    "EvalConfig",
    "ThresholdMatches",
    "MatchSet",
    "ApReport",
    "PqCategory",
    "PqReport",
    "ScoredBox",
    "match_image",
    "build_match_set",
    "ap_entity",
    "ap_overlap_tolerant",
    "ap_box",
    "pq",
]

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol parameters.

    ``size_buckets`` are the two area boundaries (in px^2) separating
    small/medium/large: small < b0, b0 <= medium <= b1, large > b1.
    """

    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_points: int = 101
    max_dets_per_image: int = 100
    size_buckets: tuple[int, int] = (32**2, 96**2)
    mode: str = "agnostic"

    def __post_init__(self):
        ths = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ths)
        if not ths:
            raise ConfigError("at least one IoU threshold is required")
        if any(not 0.0 < t <= 1.0 for t in ths):
            raise ConfigError(f"IoU thresholds must lie in (0, 1]: {ths}")
        if any(b >= a for a, b in zip(ths[1:], ths)):
            raise ConfigError(f"IoU thresholds must be strictly increasing: {ths}")
        if self.recall_points < 2:
            raise ConfigError("recall_points must be at least 2")
        if self.max_dets_per_image < 1:
            raise ConfigError("max_dets_per_image must be at least 1")
        if self.mode not in ("agnostic", "oriented"):
            raise ConfigError(f"mode must be 'agnostic' or 'oriented', got {self.mode!r}")

    def recall_grid(self) -> np.ndarray:
        return np.array([i / (self.recall_points - 1) for i in range(self.recall_points)])

    def to_dict(self) -> dict:
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "recall_points": self.recall_points,
            "max_dets_per_image": self.max_dets_per_image,
            "size_buckets": list(self.size_buckets),
            "mode": self.mode,
        }


_BUCKETS = ("all", "small", "medium", "large")


def _bucket_mask(areas: np.ndarray, bucket: str, cfg: EvalConfig) -> np.ndarray:
    b0, b1 = cfg.size_buckets
    if bucket == "all":
        return np.ones(areas.shape, dtype=bool)
    if bucket == "small":
        return areas < b0
    if bucket == "medium":
        return (areas >= b0) & (areas <= b1)
    return areas > b1


# ---------------------------------------------------------------------------
# Greedy matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdMatches:
    """Matching outcome for one image at one IoU threshold."""

    threshold: float
    matches: tuple[tuple[int, int, float], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


@dataclass(frozen=True)
class MatchSet:
    """Per-threshold matchings of one image."""

    entries: tuple[ThresholdMatches, ...]


def _greedy_assign(iou: np.ndarray, det_order: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy best-IoU assignment; returns matched gt index per pred or -1.

    Predictions are visited in det_order (descending score); each takes the
    still-unmatched GT with the highest IoU at or above the threshold, ties
    to the lowest GT index.
    """
    n_pred, n_gt = iou.shape
    matched = np.full(n_pred, -1, dtype=np.int64)
    taken = np.zeros(n_gt, dtype=bool)
    for p in det_order:
        if taken.all():
            break
        candidate = np.where(taken, -1.0, iou[p])
        g = int(np.argmax(candidate))
        if candidate[g] >= threshold:
            matched[p] = g
            taken[g] = True
    return matched


def match_image(preds, gts, threshold: float, void=None) -> ThresholdMatches:
    """Match scored prediction masks against GT masks at one IoU threshold.

    ``preds`` is a sequence of (mask, score) pairs; ``gts`` a sequence of
    masks. GT void pixels are removed from each prediction before IoU.
    Unmatched predictions are the false positives, unmatched GTs the false
    negatives.
    """
    pred_masks = [as_mask(m) for m, _ in preds]
    scores = [float(s) for _, s in preds]
    gt_masks = [as_mask(g) for g in gts]
    shapes = {m.shape for m in pred_masks} | {g.shape for g in gt_masks}
    if void is not None:
        shapes.add(as_mask(void).shape)
    if len(shapes) > 1:
        raise ShapeError(f"mask shapes differ within one image: {shapes}")
    iou = _pairwise_iou(pred_masks, gt_masks, void)
    order = np.array(
        sorted(range(len(pred_masks)), key=lambda i: (-scores[i], i)), dtype=np.int64
    )
    matched = _greedy_assign(iou, order, threshold)
    pairs = tuple(
        (int(p), int(matched[p]), float(iou[p, matched[p]]))
        for p in order
        if matched[p] >= 0
    )
    matched_gts = {g for _, g, _ in pairs}
    return ThresholdMatches(
        threshold=float(threshold),
        matches=pairs,
        unmatched_preds=tuple(int(p) for p in order if matched[p] < 0),
        unmatched_gts=tuple(g for g in range(len(gt_masks)) if g not in matched_gts),
    )


def build_match_set(preds, gts, cfg: EvalConfig | None = None, void=None) -> MatchSet:
    cfg = cfg or EvalConfig()
    return MatchSet(
        entries=tuple(match_image(preds, gts, t, void) for t in cfg.iou_thresholds)
    )


def _pairwise_iou(pred_masks, gt_masks, void) -> np.ndarray:
    """IoU matrix from per-pair pixel counts (overlap-tolerant path)."""
    iou = np.zeros((len(pred_masks), len(gt_masks)))
    gt_areas = [int(np.count_nonzero(g)) for g in gt_masks]
    for p, pm in enumerate(pred_masks):
        area = int(np.count_nonzero(pm))
        area_v = area - int(np.count_nonzero(pm & void)) if void is not None else area
        for g, gm in enumerate(gt_masks):
            inter = int(np.count_nonzero(pm & gm))
            iou[p, g] = iou_from_counts(inter, area_v, gt_areas[g])
    return iou


# ---------------------------------------------------------------------------
# Per-image evaluation units
# ---------------------------------------------------------------------------


@dataclass
class _ImageResult:
    """Everything the accumulator needs from one image."""

    gt_areas: np.ndarray            # (G,) raw GT areas
    det_scores: np.ndarray          # (D,) capped, image-local order
    det_areas: np.ndarray           # (D,) raw prediction areas
    matched_gt_area: np.ndarray     # (T, D) matched GT area or -1


def _cap_order(scores: list[float], max_dets: int) -> np.ndarray:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return np.array(order[:max_dets], dtype=np.int64)


def _image_result_from_iou(
    iou: np.ndarray,
    scores: list[float],
    det_areas: np.ndarray,
    gt_areas: np.ndarray,
    thresholds: tuple[float, ...],
    max_dets: int,
) -> _ImageResult:
    keep = _cap_order(scores, max_dets)
    iou = iou[keep]
    det_scores = np.array([scores[i] for i in keep])
    det_areas = det_areas[keep]
    order = np.arange(len(keep))  # keep is already score-sorted
    matched_area = np.full((len(thresholds), len(keep)), -1, dtype=np.int64)
    for ti, t in enumerate(thresholds):
        matched = _greedy_assign(iou, order, t)
        hit = matched >= 0
        matched_area[ti, hit] = gt_areas[matched[hit]]
    return _ImageResult(
        gt_areas=gt_areas,
        det_scores=det_scores,
        det_areas=det_areas,
        matched_gt_area=matched_area,
    )


def _map_counts(pred_ids: np.ndarray, gt_ids: np.ndarray):
    """Joint pixel counts of two ID maps via bincount (no sorting).

    Returns (pred_unique, gt_unique, inter, pred_void, pred_areas, gt_areas)
    where inter[p, g] counts pixels shared by pred_unique[p] and
    gt_unique[g], and pred_void[p] counts prediction pixels on GT void.
    """
    pred_flat = pred_ids.ravel()
    gt_flat = gt_ids.ravel()
    p_hist = np.bincount(pred_flat)
    pred_unique = np.flatnonzero(p_hist)
    pred_unique = pred_unique[pred_unique != 0]
    g_hist = np.bincount(gt_flat)
    gt_unique = np.flatnonzero(g_hist)
    gt_unique = gt_unique[gt_unique != 0]
    p_lut = np.zeros(len(p_hist), dtype=np.int64)
    p_lut[pred_unique] = np.arange(1, len(pred_unique) + 1)
    g_lut = np.zeros(len(g_hist), dtype=np.int64)
    g_lut[gt_unique] = np.arange(1, len(gt_unique) + 1)
    g_width = len(gt_unique) + 1
    joint = p_lut[pred_flat] * g_width + g_lut[gt_flat]
    counts = np.bincount(joint, minlength=(len(pred_unique) + 1) * g_width)
    counts = counts.reshape(len(pred_unique) + 1, g_width)
    inter = counts[1:, 1:]
    pred_void = counts[1:, 0]
    pred_areas = counts[1:].sum(axis=1)
    gt_areas = counts[:, 1:].sum(axis=0)
    return pred_unique, gt_unique, inter, pred_void, pred_areas, gt_areas


def _iou_from_maps(inter, pred_void, pred_areas, gt_areas) -> np.ndarray:
    iou = np.zeros(inter.shape)
    for p in range(inter.shape[0]):
        pv = int(pred_areas[p] - pred_void[p])
        for g in range(inter.shape[1]):
            iou[p, g] = iou_from_counts(int(inter[p, g]), pv, int(gt_areas[g]))
    return iou


def _entity_image_result(
    pred_ids: np.ndarray,
    pred_scores: dict[int, float],
    gt_ids: np.ndarray,
    cfg: EvalConfig,
) -> _ImageResult:
    if pred_ids.shape != gt_ids.shape:
        raise ShapeError(f"prediction map {pred_ids.shape} != GT map {gt_ids.shape}")
    pred_unique, _, inter, pred_void, pred_areas, gt_areas = _map_counts(pred_ids, gt_ids)
    iou = _iou_from_maps(inter, pred_void, pred_areas, gt_areas)
    scores = [float(pred_scores[int(i)]) for i in pred_unique]
    return _image_result_from_iou(
        iou, scores, pred_areas.astype(np.int64), gt_areas.astype(np.int64),
        cfg.iou_thresholds, cfg.max_dets_per_image,
    )


def _tolerant_image_result(
    entities: list[ScoredEntity],
    gt_record: ImageRecord,
    cfg: EvalConfig,
) -> _ImageResult:
    shape = (gt_record.height, gt_record.width)
    masks = []
    for ent in entities:
        m = ent.dense_mask()
        if m.shape != shape:
            raise ShapeError(
                f"image {gt_record.image_id}: mask shape {m.shape} != {shape}"
            )
        masks.append(m)
    scores = [float(e.score) for e in entities]
    gt_map = gt_record.entity_map()
    gt_masks = [m for _, m in _decompose_cached(gt_map)]
    void = gt_map == 0
    iou = _pairwise_iou(masks, gt_masks, void)
    det_areas = np.array([int(np.count_nonzero(m)) for m in masks], dtype=np.int64)
    gt_areas = np.array([int(np.count_nonzero(g)) for g in gt_masks], dtype=np.int64)
    return _image_result_from_iou(
        iou, scores, det_areas, gt_areas, cfg.iou_thresholds, cfg.max_dets_per_image
    )


def _decompose_cached(gt_map: np.ndarray):
    ids = np.unique(gt_map)
    return [(int(i), gt_map == i) for i in ids if i != 0]


# ---------------------------------------------------------------------------
# Dataset-wide accumulation
# ---------------------------------------------------------------------------


@dataclass
class ApReport:
    """AP summary; None marks a bucket with no ground truth of that size."""

    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None
    per_threshold: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_s": self.ap_s,
            "ap_m": self.ap_m,
            "ap_l": self.ap_l,
            "per_threshold": self.per_threshold,
        }


class _Accumulator:
    """Ordered fold of per-image results into PR-curve raw material."""

    def __init__(self, cfg: EvalConfig):
        self.cfg = cfg
        self.n_thresholds = len(cfg.iou_thresholds)
        self.gt_areas: list[np.ndarray] = []
        self.scores: list[np.ndarray] = []
        self.img_idx: list[np.ndarray] = []
        self.det_idx: list[np.ndarray] = []
        self.det_areas: list[np.ndarray] = []
        self.matched: list[np.ndarray] = []
        self._next_img = 0

    def add(self, result: _ImageResult) -> None:
        idx = self._next_img
        self._next_img += 1
        self.gt_areas.append(result.gt_areas)
        d = len(result.det_scores)
        self.scores.append(result.det_scores)
        self.img_idx.append(np.full(d, idx, dtype=np.int64))
        self.det_idx.append(np.arange(d, dtype=np.int64))
        self.det_areas.append(result.det_areas)
        self.matched.append(result.matched_gt_area)

    def _curve(self, ti: int, order: np.ndarray, bucket: str):
        """Cumulative (recall, precision) for one threshold and bucket."""
        matched = np.concatenate([m[ti] for m in self.matched]) if self.matched else np.zeros(0, dtype=np.int64)
        matched = matched[order]
        det_areas = np.concatenate(self.det_areas)[order] if self.det_areas else np.zeros(0, dtype=np.int64)
        gt_areas = np.concatenate(self.gt_areas) if self.gt_areas else np.zeros(0, dtype=np.int64)
        npig = int(np.count_nonzero(_bucket_mask(gt_areas, bucket, self.cfg)))
        if npig == 0:
            return None
        hit = matched >= 0
        tp_flag = hit & _bucket_mask(matched, bucket, self.cfg)
        # A det matched to an out-of-bucket GT is ignored for this bucket;
        # an unmatched det counts only when its own area is in the bucket.
        fp_flag = ~hit & _bucket_mask(det_areas, bucket, self.cfg)
        consider = tp_flag | fp_flag
        tp = np.cumsum(tp_flag[consider]).astype(np.float64)
        fp = np.cumsum(fp_flag[consider]).astype(np.float64)
        recall = tp / npig
        precision = np.zeros_like(tp)
        nonzero = (tp + fp) > 0
        precision[nonzero] = tp[nonzero] / (tp + fp)[nonzero]
        return recall, precision

    def _ap_from_curve(self, curve) -> float | None:
        if curve is None:
            return None
        recall, precision = curve
        grid = self.cfg.recall_grid()
        pr = precision.copy()
        for i in range(len(pr) - 1, 0, -1):
            if pr[i] > pr[i - 1]:
                pr[i - 1] = pr[i]
        q = np.zeros(len(grid))
        idx = np.searchsorted(recall, grid, side="left")
        valid = idx < len(pr)
        q[valid] = pr[idx[valid]]
        return float(np.mean(q))

    def bucket_values(self) -> dict[str, list[float | None]]:
        """AP per (bucket, threshold); None where the bucket has no GT."""
        scores = np.concatenate(self.scores) if self.scores else np.zeros(0)
        img_idx = np.concatenate(self.img_idx) if self.img_idx else np.zeros(0, dtype=np.int64)
        det_idx = np.concatenate(self.det_idx) if self.det_idx else np.zeros(0, dtype=np.int64)
        order = np.lexsort((det_idx, img_idx, -scores))
        per_bucket: dict[str, list[float | None]] = {b: [] for b in _BUCKETS}
        for ti in range(self.n_thresholds):
            for bucket in _BUCKETS:
                per_bucket[bucket].append(self._ap_from_curve(self._curve(ti, order, bucket)))
        return per_bucket

    def finalize(self) -> ApReport:
        return _report_from_threshold_aps(self.cfg, self.bucket_values())


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))


def _threshold_value(cfg: EvalConfig, values: list[float | None], wanted: float) -> float | None:
    for t, v in zip(cfg.iou_thresholds, values):
        if abs(t - wanted) < 1e-9:
            return v
    return None


def _report_from_threshold_aps(cfg: EvalConfig, per_bucket: dict[str, list[float | None]]) -> ApReport:
    alls = per_bucket["all"]
    return ApReport(
        ap=_mean_or_none(alls),
        ap50=_threshold_value(cfg, alls, 0.5),
        ap75=_threshold_value(cfg, alls, 0.75),
        ap_s=_mean_or_none(per_bucket["small"]),
        ap_m=_mean_or_none(per_bucket["medium"]),
        ap_l=_mean_or_none(per_bucket["large"]),
        per_threshold=[
            {"iou_threshold": t, "ap": v} for t, v in zip(cfg.iou_thresholds, alls)
        ],
    )


def _run_jobs(jobs: list[Callable[[], _ImageResult]], cfg: EvalConfig, threads: int) -> ApReport:
    acc = _Accumulator(cfg)
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for result in pool.map(lambda fn: fn(), jobs):
                acc.add(result)
    else:
        for fn in jobs:
            acc.add(fn())
    return acc.finalize()


# ---------------------------------------------------------------------------
# Public evaluators
# ---------------------------------------------------------------------------


def _require_agnostic(cfg: EvalConfig, op: str) -> None:
    if cfg.mode != "agnostic":
        raise ConfigError(f"{op} supports category-agnostic mode only")


def _check_pred_keys(predictions: dict, gts: EntityDataset) -> None:
    known = {img.image_id for img in gts.images}
    unknown = set(predictions) - known
    if unknown:
        raise ValidationError(f"predictions reference unknown image ids {sorted(unknown)}")


def _disjoint_or_raise(entities: list[ScoredEntity], record: ImageRecord) -> ResolvedPrediction:
    """Treat a scored-mask list as resolved input, rejecting any overlap."""
    shape = (record.height, record.width)
    claimed = np.zeros(shape, dtype=bool)
    ids = np.zeros(shape, dtype=np.int64)
    scores = {0: 0.0}
    for ent in entities:
        if ent.entity_id in scores:
            raise ValidationError(
                f"image {record.image_id}: duplicate entity_id {ent.entity_id}"
            )
        m = ent.dense_mask()
        if m.shape != shape:
            raise ShapeError(f"image {record.image_id}: mask shape {m.shape} != {shape}")
        if np.any(claimed & m):
            raise ConstraintError(
                f"image {record.image_id}: overlapping masks violate the "
                "non-overlap constraint (resolve them first)"
            )
        claimed |= m
        ids[m] = ent.entity_id
        scores[ent.entity_id] = float(ent.score)
    return ResolvedPrediction(ids=ids, scores=scores)


def ap_entity(
    predictions: dict[int, ResolvedPrediction | list[ScoredEntity]],
    gts: EntityDataset,
    cfg: EvalConfig | None = None,
    threads: int = 1,
) -> ApReport:
    """Strict non-overlapping mask AP.

    ``predictions`` maps image_id to a ResolvedPrediction (or to a scored
    mask list, which is accepted only if its masks are pairwise disjoint).
    Images without an entry count as zero detections.
    """
    cfg = cfg or EvalConfig()
    _require_agnostic(cfg, "ap_entity")
    _check_pred_keys(predictions, gts)
    by_id = gts.by_image_id()
    resolved: dict[int, ResolvedPrediction] = {}
    for image_id, pred in predictions.items():
        if isinstance(pred, ResolvedPrediction):
            validate_prediction(pred)
            resolved[image_id] = pred
        else:
            resolved[image_id] = _disjoint_or_raise(list(pred), by_id[image_id])

    empty = ResolvedPrediction(ids=np.zeros((1, 1), dtype=np.int64), scores={0: 0.0})
    jobs = []
    for record in gts.images:
        pred = resolved.get(record.image_id, empty)
        jobs.append(_entity_job(pred, record, cfg))
    return _run_jobs(jobs, cfg, threads)


def _entity_job(pred: ResolvedPrediction, record: ImageRecord, cfg: EvalConfig):
    def run() -> _ImageResult:
        gt_map = record.entity_map()
        pred_ids = pred.ids
        if pred_ids.shape == (1, 1) and not pred.scores.keys() - {0}:
            pred_ids = np.zeros(gt_map.shape, dtype=np.int64)
        return _entity_image_result(as_entity_map(pred_ids), pred.scores, gt_map, cfg)

    return run


def ap_overlap_tolerant(
    predictions: dict[int, list[ScoredEntity]],
    gts: EntityDataset,
    cfg: EvalConfig | None = None,
    threads: int = 1,
) -> ApReport:
    """Mask AP over raw scored masks; overlapping masks are allowed."""
    cfg = cfg or EvalConfig()
    _require_agnostic(cfg, "ap_overlap_tolerant")
    _check_pred_keys(predictions, gts)
    jobs = []
    for record in gts.images:
        entities = list(predictions.get(record.image_id, []))
        jobs.append(_tolerant_job(entities, record, cfg))
    return _run_jobs(jobs, cfg, threads)


def _tolerant_job(entities: list[ScoredEntity], record: ImageRecord, cfg: EvalConfig):
    def run() -> _ImageResult:
        return _tolerant_image_result(entities, record, cfg)

    return run


@dataclass(frozen=True)
class ScoredBox:
    bbox: Bbox
    score: float
    category: int | None = None


def _box_image_result(
    dets: list[ScoredBox], gt_boxes: list[Bbox], cfg: EvalConfig
) -> _ImageResult:
    iou = np.zeros((len(dets), len(gt_boxes)))
    for p, det in enumerate(dets):
        for g, gt in enumerate(gt_boxes):
            iou[p, g] = box_iou(det.bbox, gt)
    scores = [float(d.score) for d in dets]
    det_areas = np.array([d.bbox.area for d in dets], dtype=np.int64)
    gt_areas = np.array([g.area for g in gt_boxes], dtype=np.int64)
    return _image_result_from_iou(
        iou, scores, det_areas, gt_areas, cfg.iou_thresholds, cfg.max_dets_per_image
    )


def ap_box(
    predictions: dict[int, list[ScoredBox]],
    gts: EntityDataset,
    cfg: EvalConfig | None = None,
    threads: int = 1,
) -> ApReport:
    """Box AP.

    Category-agnostic mode ignores labels entirely. Category-oriented mode
    computes AP per ground-truth category over the images containing that
    category and averages the per-category reports; it requires category
    labels on every box on both sides.
    """
    cfg = cfg or EvalConfig()
    _check_pred_keys(predictions, gts)
    gt_boxes: dict[int, list[tuple[Bbox, int | None]]] = {
        img.image_id: [(e.bbox, e.source_category) for e in img.entities]
        for img in gts.images
    }
    if cfg.mode == "agnostic":
        jobs = []
        for record in gts.images:
            dets = list(predictions.get(record.image_id, []))
            boxes = [b for b, _ in gt_boxes[record.image_id]]
            jobs.append(lambda d=dets, b=boxes: _box_image_result(d, b, cfg))
        return _run_jobs(jobs, cfg, threads)

    for image_id, dets in predictions.items():
        if any(d.category is None for d in dets):
            raise ConfigError(
                f"image {image_id}: category-oriented mode requires categories "
                "on every detection"
            )
    categories = sorted(
        {c for boxes in gt_boxes.values() for _, c in boxes if c is not None}
    )
    if any(c is None for boxes in gt_boxes.values() for _, c in boxes):
        raise ConfigError("category-oriented mode requires categories on every GT box")
    if not categories:
        raise ConfigError("category-oriented mode requires at least one GT category")

    per_bucket: dict[str, list[list[float | None]]] = {b: [] for b in _BUCKETS}
    for cat in categories:
        acc = _Accumulator(cfg)
        for record in gts.images:
            cat_gts = [b for b, c in gt_boxes[record.image_id] if c == cat]
            if not cat_gts:
                continue
            dets = [d for d in predictions.get(record.image_id, []) if d.category == cat]
            acc.add(_box_image_result(dets, cat_gts, cfg))
        values = acc.bucket_values()
        for bucket in _BUCKETS:
            per_bucket[bucket].append(values[bucket])
    merged: dict[str, list[float | None]] = {}
    for bucket in _BUCKETS:
        columns = per_bucket[bucket]
        merged[bucket] = [
            _mean_or_none([col[ti] for col in columns])
            for ti in range(len(cfg.iou_thresholds))
        ]
    return _report_from_threshold_aps(cfg, merged)


# ---------------------------------------------------------------------------
# Panoptic quality
# ---------------------------------------------------------------------------


@dataclass
class PqCategory:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    @property
    def denominator(self) -> float:
        return self.tp + 0.5 * self.fp + 0.5 * self.fn

    @property
    def pq(self) -> float:
        d = self.denominator
        return self.iou_sum / d if d > 0 else 0.0

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp > 0 else 0.0

    @property
    def rq(self) -> float:
        d = self.denominator
        return self.tp / d if d > 0 else 0.0


@dataclass
class PqReport:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    per_category: dict[int, PqCategory]

    def to_dict(self) -> dict:
        return {
            "pq": self.pq,
            "sq": self.sq,
            "rq": self.rq,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_category": [
                {
                    "category": cat,
                    "pq": stats.pq,
                    "sq": stats.sq,
                    "rq": stats.rq,
                    "tp": stats.tp,
                    "fp": stats.fp,
                    "fn": stats.fn,
                }
                for cat, stats in sorted(self.per_category.items())
            ],
        }


def pq(predictions: dict[int, ResolvedPrediction], gts: EntityDataset) -> PqReport:
    """Panoptic quality: per-category matching at IoU strictly above 0.5.

    Both sides must carry categories; use ap_entity for categoryless
    evaluation. Prediction segments with more than half their area on GT
    void are not counted as false positives.
    """
    _check_pred_keys(predictions, gts)
    stats: dict[int, PqCategory] = {}
    for record in gts.images:
        gt_cats = {e.entity_id: e.source_category for e in record.entities}
        if any(c is None for c in gt_cats.values()):
            raise ConfigError(
                f"image {record.image_id}: GT entities lack categories; "
                "PQ needs category labels - use ap_entity instead"
            )
        pred = predictions.get(record.image_id)
        if pred is None:
            pred = ResolvedPrediction(
                ids=np.zeros((record.height, record.width), dtype=np.int64),
                scores={0: 0.0},
                categories={},
            )
        validate_prediction(pred)
        pred_present = set(int(i) for i in np.unique(pred.ids)) - {0}
        if pred.categories is None or pred_present - set(pred.categories):
            raise ConfigError(
                f"image {record.image_id}: prediction lacks categories; "
                "PQ needs category labels - use ap_entity instead"
            )
        gt_map = record.entity_map()
        pred_ids = pred.ids
        if pred_ids.shape != gt_map.shape:
            raise ShapeError(
                f"image {record.image_id}: prediction map {pred_ids.shape} "
                f"!= GT map {gt_map.shape}"
            )
        pred_unique, gt_unique, inter, pred_void, pred_areas, gt_areas = _map_counts(
            as_entity_map(pred_ids), gt_map
        )
        iou = _iou_from_maps(inter, pred_void, pred_areas, gt_areas)
        matched_p: set[int] = set()
        matched_g: set[int] = set()
        for p, pid in enumerate(pred_unique):
            p_cat = pred.categories[int(pid)]
            for g, gid in enumerate(gt_unique):
                if gt_cats[int(gid)] != p_cat:
                    continue
                if iou[p, g] > 0.5:
                    cat = stats.setdefault(p_cat, PqCategory())
                    cat.tp += 1
                    cat.iou_sum += float(iou[p, g])
                    matched_p.add(p)
                    matched_g.add(g)
        for g, gid in enumerate(gt_unique):
            if g not in matched_g:
                stats.setdefault(gt_cats[int(gid)], PqCategory()).fn += 1
        for p, pid in enumerate(pred_unique):
            if p in matched_p:
                continue
            if pred_void[p] > 0.5 * pred_areas[p]:
                continue  # mostly-on-void predictions are forgiven
            stats.setdefault(pred.categories[int(pid)], PqCategory()).fp += 1

    counted = {c: s for c, s in stats.items() if s.tp + s.fp + s.fn > 0}
    if counted:
        pq_mean = float(np.mean([s.pq for s in counted.values()]))
        sq_mean = float(np.mean([s.sq for s in counted.values()]))
        rq_mean = float(np.mean([s.rq for s in counted.values()]))
    else:
        pq_mean = sq_mean = rq_mean = 0.0
    return PqReport(
        pq=pq_mean,
        sq=sq_mean,
        rq=rq_mean,
        tp=sum(s.tp for s in stats.values()),
        fp=sum(s.fp for s in stats.values()),
        fn=sum(s.fn for s in stats.values()),
        per_category=stats,
    )
