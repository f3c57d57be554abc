"""COCO-panoptic ingestion and the categoryless entity dataset format.

Panoptic annotations arrive as a JSON index plus per-image ID PNGs whose
pixel value encodes the segment ID as R + 256*G + 256**2*B. Conversion
drops the thing/stuff distinction: every segment becomes one entity (kept
whole even when disconnected), categories are demoted to optional
metadata, and unannotated pixels stay void.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, IngestionError, IntegrityError, ToolkitError
from .masks import (
    Bbox,
    RleMask,
    as_entity_map,
    bbox_of,
    entity_map_compose,
    mask_area,
    rle_decode,
    rle_encode,
)

__all__ = [
    "PanopticSegment",
    "EntityRecord",
    "ImageRecord",
    "EntityDataset",
    "ProvenanceEntry",
    "decode_id_png",
    "encode_id_png",
    "parse_panoptic",
    "to_entity_format",
    "image_record_from_masks",
    "convert_panoptic",
    "merge_datasets",
    "presample",
    "load_dataset",
    "save_dataset",
    "dataset_to_json",
]


@dataclass(frozen=True)
class PanopticSegment:
    """One source segment before conversion."""

    segment_id: int
    category_id: int
    is_thing: bool
    area: int

    def __post_init__(self):
        if self.segment_id <= 0:
            raise FormatError(f"segment_id must be positive, got {self.segment_id}")
        if self.area < 1:
            raise FormatError(f"segment {self.segment_id} has area {self.area}")


@dataclass(frozen=True)
class EntityRecord:
    """One entity of one image: RLE mask plus derived geometry."""

    entity_id: int
    rle: RleMask
    area: int
    bbox: Bbox
    source_category: int | None = None
    source_is_thing: bool | None = None

    def dense_mask(self) -> np.ndarray:
        return rle_decode(self.rle)

    def to_dict(self) -> dict:
        out = {
            "entity_id": self.entity_id,
            "rle": self.rle.to_dict(),
            "area": self.area,
            "bbox": self.bbox.to_list(),
        }
        if self.source_category is not None:
            out["source_category"] = self.source_category
        if self.source_is_thing is not None:
            out["source_is_thing"] = self.source_is_thing
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "EntityRecord":
        return cls(
            entity_id=int(obj["entity_id"]),
            rle=RleMask.from_dict(obj["rle"]),
            area=int(obj["area"]),
            bbox=Bbox.from_list(obj["bbox"]),
            source_category=obj.get("source_category"),
            source_is_thing=obj.get("source_is_thing"),
        )


@dataclass(frozen=True)
class ImageRecord:
    """One annotated image: disjoint entities; everything else is void."""

    image_id: int
    height: int
    width: int
    entities: tuple[EntityRecord, ...]
    source_dataset: str = ""

    def entity_map(self) -> np.ndarray:
        return entity_map_compose(
            self.height,
            self.width,
            [(e.entity_id, e.dense_mask()) for e in self.entities],
        )

    def void_mask(self) -> np.ndarray:
        """Pixels carrying no annotation."""
        return self.entity_map() == 0

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "height": self.height,
            "width": self.width,
            "source_dataset": self.source_dataset,
            "entities": [e.to_dict() for e in self.entities],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ImageRecord":
        return cls(
            image_id=int(obj["image_id"]),
            height=int(obj["height"]),
            width=int(obj["width"]),
            entities=tuple(EntityRecord.from_dict(e) for e in obj["entities"]),
            source_dataset=str(obj.get("source_dataset", "")),
        )


@dataclass(frozen=True)
class ProvenanceEntry:
    """Where a slice of a dataset came from and how its IDs were shifted."""

    source: str
    offset: int = 0

    def to_dict(self) -> dict:
        return {"source": self.source, "offset": self.offset}


@dataclass(frozen=True)
class EntityDataset:
    images: tuple[ImageRecord, ...]
    provenance: tuple[ProvenanceEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ids = [img.image_id for img in self.images]
        if len(set(ids)) != len(ids):
            raise IntegrityError("image_id values must be unique across the dataset")

    def by_image_id(self) -> dict[int, ImageRecord]:
        return {img.image_id: img for img in self.images}


def decode_id_png(path) -> np.ndarray:
    """Decode an ID PNG to an integer map (id = R + 256*G + 256**2*B)."""
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.int64)
    return rgb[..., 0] + 256 * rgb[..., 1] + 256 * 256 * rgb[..., 2]


def encode_id_png(ids, path) -> None:
    """Write an integer ID map as an RGB PNG (inverse of decode_id_png)."""
    ids = as_entity_map(ids)
    if ids.max() >= 256**3:
        raise FormatError("entity IDs above 2**24-1 cannot be PNG-encoded")
    rgb = np.empty(ids.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = ids % 256
    rgb[..., 1] = (ids // 256) % 256
    rgb[..., 2] = ids // (256 * 256)
    Image.fromarray(rgb, mode="RGB").save(path)


def parse_panoptic(image_info: dict, annotation: dict, categories: dict[int, dict], png_path) -> tuple[list[PanopticSegment], np.ndarray]:
    """Parse one image's panoptic annotation against its ID PNG.

    Returns the segment metadata and the decoded ID map. The PNG and JSON
    must agree: matching dimensions, every JSON segment present in the PNG,
    and no PNG ID that the JSON does not declare (0 is void).
    """
    name = f"image {image_info.get('id', '?')}"
    ids = decode_id_png(png_path)
    if ids.shape != (image_info["height"], image_info["width"]):
        raise IngestionError(
            f"{name}: PNG size {ids.shape} != JSON size "
            f"({image_info['height']}, {image_info['width']})"
        )
    px_counts = dict(zip(*np.unique(ids, return_counts=True)))
    declared = {}
    segments = []
    for info in annotation.get("segments_info", []):
        seg_id = int(info["id"])
        if seg_id in declared:
            raise IngestionError(f"{name}: duplicate segment id {seg_id}")
        area = px_counts.get(seg_id, 0)
        if area == 0:
            raise IngestionError(f"{name}: segment {seg_id} missing from PNG")
        cat_id = int(info["category_id"])
        if cat_id not in categories:
            raise IngestionError(f"{name}: unknown category {cat_id}")
        seg = PanopticSegment(
            segment_id=seg_id,
            category_id=cat_id,
            is_thing=bool(categories[cat_id].get("isthing", True)),
            area=int(area),
        )
        declared[seg_id] = seg
        segments.append(seg)
    unknown = set(px_counts) - set(declared) - {0}
    if unknown:
        raise IngestionError(f"{name}: PNG contains undeclared IDs {sorted(unknown)}")
    return segments, ids


def to_entity_format(image_info: dict, segments: list[PanopticSegment], ids: np.ndarray, source_dataset: str = "") -> ImageRecord:
    """Convert one parsed panoptic image to the entity format.

    Every thing or stuff segment becomes one entity; disconnected parts of
    a segment stay together. Dense entity IDs are assigned by descending
    area, ties by ascending source segment ID.
    """
    order = sorted(segments, key=lambda s: (-s.area, s.segment_id))
    entities = []
    for entity_id, seg in enumerate(order, start=1):
        mask = ids == seg.segment_id
        entities.append(
            EntityRecord(
                entity_id=entity_id,
                rle=rle_encode(mask),
                area=seg.area,
                bbox=bbox_of(mask),
                source_category=seg.category_id,
                source_is_thing=seg.is_thing,
            )
        )
    return ImageRecord(
        image_id=int(image_info["id"]),
        height=int(image_info["height"]),
        width=int(image_info["width"]),
        entities=tuple(entities),
        source_dataset=source_dataset,
    )


def image_record_from_masks(image_id: int, height: int, width: int, masks, source_dataset: str = "", categories=None) -> ImageRecord:
    """Build an ImageRecord from raw disjoint masks (synthetic fixtures).

    Overlapping masks raise IntegrityError; dense IDs follow list order.
    """
    claimed = np.zeros((height, width), dtype=bool)
    entities = []
    for i, mask in enumerate(masks, start=1):
        mask = np.asarray(mask, dtype=bool)
        if np.any(claimed & mask):
            raise IntegrityError(f"image {image_id}: source masks overlap")
        claimed |= mask
        entities.append(
            EntityRecord(
                entity_id=i,
                rle=rle_encode(mask),
                area=mask_area(mask),
                bbox=bbox_of(mask),
                source_category=None if categories is None else categories[i - 1],
            )
        )
    return ImageRecord(
        image_id=image_id,
        height=height,
        width=width,
        entities=tuple(entities),
        source_dataset=source_dataset,
    )


def convert_panoptic(panoptic_json, png_dir, source_dataset: str | None = None) -> EntityDataset:
    """Convert a COCO-panoptic annotation tree to an EntityDataset."""
    panoptic_json = Path(panoptic_json)
    png_dir = Path(png_dir)
    try:
        spec = json.loads(panoptic_json.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{panoptic_json}: not valid JSON: {exc}") from exc
    if source_dataset is None:
        source_dataset = panoptic_json.stem
    categories = {int(c["id"]): c for c in spec.get("categories", [])}
    annotations = {int(a["image_id"]): a for a in spec.get("annotations", [])}
    records = []
    for image_info in spec.get("images", []):
        image_id = int(image_info["id"])
        annotation = annotations.get(image_id)
        if annotation is None:
            raise IngestionError(f"image {image_id}: no annotation entry")
        png_path = png_dir / annotation["file_name"]
        if not png_path.exists():
            raise IngestionError(f"image {image_id}: missing PNG {png_path}")
        segments, ids = parse_panoptic(image_info, annotation, categories, png_path)
        records.append(to_entity_format(image_info, segments, ids, source_dataset))
    return EntityDataset(
        images=tuple(records),
        provenance=(ProvenanceEntry(source=source_dataset, offset=0),),
    )


def merge_datasets(datasets: list[EntityDataset]) -> EntityDataset:
    """Concatenate datasets, offsetting image IDs so they stay unique.

    No category reconciliation happens: source category IDs ride along
    untouched, which is the whole point of the categoryless format.
    """
    if not datasets:
        raise ToolkitError("merge requires at least one dataset")
    images = []
    provenance = []
    offset = 0
    for ds in datasets:
        for img in ds.images:
            images.append(
                ImageRecord(
                    image_id=img.image_id + offset,
                    height=img.height,
                    width=img.width,
                    entities=img.entities,
                    source_dataset=img.source_dataset,
                )
            )
        for entry in ds.provenance:
            provenance.append(
                ProvenanceEntry(source=entry.source, offset=entry.offset + offset)
            )
        if ds.images:
            offset += max(img.image_id for img in ds.images) + 1
    return EntityDataset(images=tuple(images), provenance=tuple(provenance))


def presample(dataset: EntityDataset, n: int, seed: int) -> EntityDataset:
    """Draw a deterministic training sample of n images.

    Uses numpy's PCG64 generator so the result is identical across
    platforms for a given (dataset, n, seed). For n <= len(dataset) the
    sample is a shuffled subset (original image IDs kept); for larger n the
    dataset is oversampled evenly - floor(n/len) full copies plus a
    remainder drawn without replacement - and shuffled, with image IDs
    renumbered 1..n because duplicates could not keep theirs.
    """
    if n < 1:
        raise ToolkitError(f"presample size must be >= 1, got {n}")
    if not dataset.images:
        raise ToolkitError("cannot presample an empty dataset")
    rng = np.random.Generator(np.random.PCG64(seed))
    size = len(dataset.images)
    if n <= size:
        picked = rng.permutation(size)[:n]
        images = tuple(dataset.images[i] for i in picked)
    else:
        full, extra = divmod(n, size)
        indices = np.concatenate(
            [np.tile(np.arange(size), full), rng.permutation(size)[:extra]]
        )
        rng.shuffle(indices)
        images = tuple(
            ImageRecord(
                image_id=new_id,
                height=dataset.images[i].height,
                width=dataset.images[i].width,
                entities=dataset.images[i].entities,
                source_dataset=dataset.images[i].source_dataset,
            )
            for new_id, i in enumerate(indices, start=1)
        )
    return EntityDataset(images=images, provenance=dataset.provenance)


def dataset_to_json(dataset: EntityDataset) -> str:
    """Canonical JSON form; byte-stable for identical datasets."""
    obj = {
        "provenance": [p.to_dict() for p in dataset.provenance],
        "images": [img.to_dict() for img in dataset.images],
    }
    return json.dumps(obj, separators=(",", ":")) + "\n"


def save_dataset(dataset: EntityDataset, path) -> None:
    Path(path).write_text(dataset_to_json(dataset))


def load_dataset(path) -> EntityDataset:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        images = tuple(ImageRecord.from_dict(o) for o in obj["images"])
        provenance = tuple(
            ProvenanceEntry(source=p["source"], offset=int(p.get("offset", 0)))
            for p in obj.get("provenance", [])
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed dataset JSON: {exc}") from exc
    return EntityDataset(images=images, provenance=provenance)
