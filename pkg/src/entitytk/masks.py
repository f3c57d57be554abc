"""Bit-exact mask representations and geometric kernels.

A binary mask is a 2-D boolean numpy array (row-major, origin top-left).
An entity map is a 2-D integer array whose values are entity IDs, with 0
reserved for unannotated (void) pixels; by construction each pixel carries
exactly one ID.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, FormatError, ShapeError

__all__ = [
    "RleMask",
    "Bbox",
    "as_mask",
    "as_entity_map",
    "rle_encode",
    "rle_decode",
    "mask_area",
    "mask_iou",
    "iou_from_counts",
    "bbox_of",
    "box_iou",
    "entity_map_decompose",
    "entity_map_compose",
]


def as_mask(mask) -> np.ndarray:
    """Coerce input to a 2-D boolean mask, validating dimensions."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"mask must be at least 1x1, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def as_entity_map(ids) -> np.ndarray:
    """Coerce input to a 2-D non-negative integer ID map."""
    arr = np.asarray(ids)
    if arr.ndim != 2:
        raise ShapeError(f"entity map must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"entity map must be at least 1x1, got {arr.shape}")
    arr = arr.astype(np.int64, copy=False)
    if arr.min() < 0:
        raise FormatError("entity IDs must be non-negative")
    return arr


@dataclass(frozen=True)
class RleMask:
    """Uncompressed run-length encoding of a binary mask.

    Runs are counted over column-major pixel order and alternate
    background/foreground starting with background, so a leading 0 marks a
    mask whose first pixel is foreground. ``sum(counts) == height * width``.
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise FormatError("RLE dimensions must be at least 1x1")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise FormatError("RLE run lengths must be non-negative")
        if any(c == 0 for c in counts[1:]):
            raise FormatError("RLE may not contain interior zero-length runs")
        if not counts:
            raise FormatError("RLE counts may not be empty")
        total = sum(counts)
        if total != self.height * self.width:
            raise FormatError(
                f"RLE counts sum to {total}, expected "
                f"{self.height}x{self.width}={self.height * self.width}"
            )

    def to_dict(self) -> dict:
        """COCO-style JSON object: {"size": [h, w], "counts": [...]}."""
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed RLE object: {obj!r}") from exc
        return cls(height=int(h), width=int(w), counts=tuple(counts))


@dataclass(frozen=True)
class Bbox:
    """Axis-aligned pixel box; x is column, y is row, both inclusive of
    x_min/y_min and half-open in width/height arithmetic."""

    x_min: int
    y_min: int
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.width, self.height]

    @classmethod
    def from_list(cls, values) -> "Bbox":
        x, y, w, h = values
        return cls(int(x), int(y), int(w), int(h))


def rle_encode(mask) -> RleMask:
    """Encode a binary mask as column-major background-first RLE."""
    mask = as_mask(mask)
    h, w = mask.shape
    flat = mask.ravel(order="F").astype(np.int8)
    # Sentinels guarantee every run boundary shows up in the diff.
    padded = np.concatenate(([-1], flat, [-1]))
    boundaries = np.nonzero(np.diff(padded))[0]
    counts = np.diff(boundaries)
    if flat[0] == 1:
        counts = np.concatenate(([0], counts))
    return RleMask(height=h, width=w, counts=tuple(int(c) for c in counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Decode an RLE back to a 2-D boolean mask (inverse of rle_encode)."""
    counts = np.asarray(rle.counts, dtype=np.int64)
    values = np.resize([0, 1], len(counts)).astype(bool)
    flat = np.repeat(values, counts)
    return flat.reshape((rle.height, rle.width), order="F")


def mask_area(mask) -> int:
    """Number of set pixels."""
    return int(np.count_nonzero(as_mask(mask)))


def iou_from_counts(intersection: int, area_a: int, area_b: int) -> float:
    """IoU from integer pixel counts; 0.0 on an empty union.

    Single shared division so every code path that agrees on the counts
    also agrees bit-for-bit on the ratio.
    """
    union = area_a + area_b - intersection
    if union <= 0:
        return 0.0
    return intersection / union


def mask_iou(a, b, void=None) -> float:
    """Intersection-over-union of two masks.

    When a void mask is given, void pixels are removed from ``a`` (the
    prediction operand) before the ratio is taken: ground-truth void means
    "no annotation", so predictions there are neither right nor wrong.
    """
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if void is not None:
        void = as_mask(void)
        if void.shape != a.shape:
            raise ShapeError(f"void shape {void.shape} != mask shape {a.shape}")
        a = a & ~void
    inter = int(np.count_nonzero(a & b))
    return iou_from_counts(inter, int(np.count_nonzero(a)), int(np.count_nonzero(b)))


def bbox_of(mask) -> Bbox:
    """Minimal axis-aligned box containing all set pixels."""
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    cols = np.flatnonzero(mask.any(axis=0))
    return Bbox(
        x_min=int(cols[0]),
        y_min=int(rows[0]),
        width=int(cols[-1] - cols[0] + 1),
        height=int(rows[-1] - rows[0] + 1),
    )


def box_iou(a: Bbox, b: Bbox) -> float:
    """IoU of two rectangles; 0.0 when disjoint."""
    ix = min(a.x_min + a.width, b.x_min + b.width) - max(a.x_min, b.x_min)
    iy = min(a.y_min + a.height, b.y_min + b.height) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return iou_from_counts(inter, a.area, b.area)


def entity_map_decompose(ids) -> list[tuple[int, np.ndarray]]:
    """Split an entity map into (id, mask) pairs, ordered by ascending ID.

    An entity keeps all its pixels in one mask even when they form several
    disconnected blobs; ID 0 (void) is skipped.
    """
    ids = as_entity_map(ids)
    out = []
    for entity_id in np.unique(ids):
        if entity_id == 0:
            continue
        out.append((int(entity_id), ids == entity_id))
    return out


def entity_map_compose(height: int, width: int, entities) -> np.ndarray:
    """Rebuild an entity map from disjoint (id, mask) pairs."""
    ids = np.zeros((height, width), dtype=np.int64)
    claimed = np.zeros((height, width), dtype=bool)
    for entity_id, mask in entities:
        mask = as_mask(mask)
        if mask.shape != (height, width):
            raise ShapeError(
                f"mask shape {mask.shape} != map shape {(height, width)}"
            )
        if entity_id <= 0:
            raise FormatError("entity IDs must be positive")
        if np.any(claimed & mask):
            raise ShapeError(f"entity {entity_id} overlaps a previous entity")
        ids[mask] = entity_id
        claimed |= mask
    return ids
