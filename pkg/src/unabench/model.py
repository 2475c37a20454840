"""Dataset and detection types plus canonical COCO-format JSON I/O.

Datasets are immutable value objects. Parsing collects every problem it can
find and reports them together; serialization is canonical (id-sorted arrays,
fixed key order, compact separators) so equal datasets always produce
byte-identical output regardless of construction order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property

logger = logging.getLogger(__name__)


class ValidationError(ValueError):
    """A dataset or results document violates the format contract.

    ``errors`` holds one message per problem, each prefixed with the path of
    the offending record, e.g. ``annotations[3] (id=17): unknown image_id 99``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        shown = "; ".join(self.errors[:8])
        extra = f"; ... ({len(self.errors) - 8} more)" if len(self.errors) > 8 else ""
        super().__init__(f"{len(self.errors)} validation error(s): {shown}{extra}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in COCO ``[x, y, w, h]`` convention, origin top-left.

    Width/height positivity is enforced at dataset validation, not here, so
    that a malformed file can be reported as a whole instead of failing on
    the first bad record.
    """

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """``(x1, y1, x2, y2)`` corner form."""
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class Annotation:
    """One ground-truth box. ``area`` is derived from the box when not given."""

    id: int
    image_id: int
    category_id: int
    bbox: BoundingBox
    crowd_flag: bool = False
    area: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.area is None:
            object.__setattr__(self, "area", self.bbox.area)


@dataclass(frozen=True)
class Detection:
    """One scored predicted box."""

    image_id: int
    category_id: int
    bbox: BoundingBox
    score: float


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of images, annotations and categories.

    Record order is preserved as given; lookups and the eligible (non-crowd)
    pool are built lazily and cached.
    """

    images: tuple[ImageRecord, ...]
    annotations: tuple[Annotation, ...]
    categories: tuple[Category, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "categories", tuple(self.categories))

    @cached_property
    def images_by_id(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    @cached_property
    def annotations_by_id(self) -> dict[int, Annotation]:
        return {a.id: a for a in self.annotations}

    @cached_property
    def categories_by_id(self) -> dict[int, Category]:
        return {c.id: c for c in self.categories}

    @cached_property
    def annotations_by_image(self) -> dict[int, tuple[Annotation, ...]]:
        grouped: dict[int, list[Annotation]] = {im.id: [] for im in self.images}
        for a in self.annotations:
            grouped.setdefault(a.image_id, []).append(a)
        return {k: tuple(v) for k, v in grouped.items()}

    @cached_property
    def non_crowd(self) -> tuple[Annotation, ...]:
        """Annotations eligible for noise injection and evaluation."""
        return tuple(a for a in self.annotations if not a.crowd_flag)

    def max_annotation_id(self) -> int:
        return max((a.id for a in self.annotations), default=0)


def _is_int(v) -> bool:
    # bool is an int subclass; a literal true/false is not a valid id
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def validate_dataset(ds: Dataset) -> None:
    """Check referential integrity and value ranges; raise on any violation.

    Boxes that stick out of their image are common in real exports and are
    only warned about. Everything else (duplicate ids, dangling references,
    non-positive box sizes, non-finite values) raises :class:`ValidationError`
    listing every offending record.
    """
    errors: list[str] = []

    seen_img: set[int] = set()
    for i, im in enumerate(ds.images):
        path = f"images[{i}] (id={im.id})"
        if im.id in seen_img:
            errors.append(f"{path}: duplicate image id")
        seen_img.add(im.id)
        if im.width <= 0 or im.height <= 0:
            errors.append(f"{path}: non-positive size {im.width}x{im.height}")

    seen_cat: set[int] = set()
    for i, c in enumerate(ds.categories):
        path = f"categories[{i}] (id={c.id})"
        if c.id in seen_cat:
            errors.append(f"{path}: duplicate category id")
        seen_cat.add(c.id)

    seen_ann: set[int] = set()
    out_of_bounds: list[int] = []
    for i, a in enumerate(ds.annotations):
        path = f"annotations[{i}] (id={a.id})"
        if a.id in seen_ann:
            errors.append(f"{path}: duplicate annotation id")
        seen_ann.add(a.id)
        if a.image_id not in seen_img:
            errors.append(f"{path}: unknown image_id {a.image_id}")
        if a.category_id not in seen_cat:
            errors.append(f"{path}: unknown category_id {a.category_id}")
        b = a.bbox
        if not all(math.isfinite(v) for v in (b.x, b.y, b.w, b.h)):
            errors.append(f"{path}: non-finite bbox {b.as_list()}")
            continue
        if b.w <= 0 or b.h <= 0:
            errors.append(f"{path}: non-positive box width/height (w={b.w}, h={b.h})")
        elif not math.isfinite(a.area) or a.area < 0:
            errors.append(f"{path}: bad area {a.area}")
        im = ds.images_by_id.get(a.image_id)
        if im is not None and (b.x < 0 or b.y < 0 or b.x + b.w > im.width or b.y + b.h > im.height):
            out_of_bounds.append(a.id)

    if out_of_bounds:
        sample = ", ".join(str(v) for v in out_of_bounds[:10])
        extra = ", ..." if len(out_of_bounds) > 10 else ""
        logger.warning(
            "%d annotation box(es) extend beyond image bounds (ids %s%s); kept as-is",
            len(out_of_bounds), sample, extra,
        )

    if errors:
        raise ValidationError(errors)


def _parse_bbox(raw, path: str, errors: list[str]) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4 or not all(_is_num(v) for v in raw):
        errors.append(f"{path}: bbox must be four finite numbers, got {raw!r}")
        return BoundingBox(0.0, 0.0, 1.0, 1.0)
    return BoundingBox(*(float(v) for v in raw))


def _req(record: dict, key: str, path: str, errors: list[str]):
    if key not in record:
        errors.append(f"{path}: missing field {key!r}")
        return None
    return record[key]


def _req_int(record: dict, key: str, path: str, errors: list[str]) -> int:
    v = _req(record, key, path, errors)
    if v is None:
        return 0
    if not _is_int(v):
        errors.append(f"{path}: field {key!r} must be an integer, got {v!r}")
        return 0
    return v


def parse_dataset(data: bytes | str) -> Dataset:
    """Parse a COCO-format annotation document and validate it.

    Accepts raw bytes or text. Raises :class:`ValidationError` with a message
    per malformed record; the document is never partially accepted.
    """
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ValidationError([f"document: not valid JSON ({e})"]) from e
    if not isinstance(doc, dict):
        raise ValidationError(["document: top level must be an object"])

    errors: list[str] = []
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            errors.append(f"document: missing or non-array {key!r} section")
    if errors:
        raise ValidationError(errors)

    images: list[ImageRecord] = []
    for i, rec in enumerate(doc["images"]):
        path = f"images[{i}]"
        if not isinstance(rec, dict):
            errors.append(f"{path}: record must be an object")
            continue
        name = _req(rec, "file_name", path, errors)
        if name is not None and not isinstance(name, str):
            errors.append(f"{path}: file_name must be a string")
            name = ""
        images.append(ImageRecord(
            id=_req_int(rec, "id", path, errors),
            width=_req_int(rec, "width", path, errors),
            height=_req_int(rec, "height", path, errors),
            file_name=name or "",
        ))

    annotations: list[Annotation] = []
    for i, rec in enumerate(doc["annotations"]):
        path = f"annotations[{i}]"
        if not isinstance(rec, dict):
            errors.append(f"{path}: record must be an object")
            continue
        if "id" in rec and _is_int(rec["id"]):
            path = f"{path} (id={rec['id']})"
        crowd = rec.get("iscrowd", 0)
        if crowd not in (0, 1, False, True):
            errors.append(f"{path}: iscrowd must be 0 or 1, got {crowd!r}")
            crowd = 0
        area = rec.get("area")
        if area is not None and not _is_num(area):
            errors.append(f"{path}: area must be a finite number, got {area!r}")
            area = None
        annotations.append(Annotation(
            id=_req_int(rec, "id", path, errors),
            image_id=_req_int(rec, "image_id", path, errors),
            category_id=_req_int(rec, "category_id", path, errors),
            bbox=_parse_bbox(_req(rec, "bbox", path, errors), path, errors),
            crowd_flag=bool(crowd),
            area=float(area) if area is not None else None,
        ))

    categories: list[Category] = []
    for i, rec in enumerate(doc["categories"]):
        path = f"categories[{i}]"
        if not isinstance(rec, dict):
            errors.append(f"{path}: record must be an object")
            continue
        name = _req(rec, "name", path, errors)
        if name is not None and not isinstance(name, str):
            errors.append(f"{path}: name must be a string")
            name = ""
        categories.append(Category(id=_req_int(rec, "id", path, errors), name=name or ""))

    if errors:
        raise ValidationError(errors)

    ds = Dataset(images=tuple(images), annotations=tuple(annotations), categories=tuple(categories))
    validate_dataset(ds)
    return ds


def serialize_dataset(ds: Dataset) -> bytes:
    """Serialize to canonical COCO JSON: id-sorted arrays, fixed key order.

    The output is a pure function of the dataset's value, so two equal
    datasets built in different orders serialize to identical bytes. Floats
    use Python's shortest round-trip repr; NaN/Inf are rejected.
    """
    doc = {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
            for im in sorted(ds.images, key=lambda im: im.id)
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": [float(v) for v in a.bbox.as_list()],
                "area": float(a.area),
                "iscrowd": int(a.crowd_flag),
            }
            for a in sorted(ds.annotations, key=lambda a: a.id)
        ],
        "categories": [
            {"id": c.id, "name": c.name}
            for c in sorted(ds.categories, key=lambda c: c.id)
        ],
    }
    text = json.dumps(doc, ensure_ascii=False, allow_nan=False, separators=(",", ":"))
    return text.encode("utf-8")


def parse_detections(data: bytes | str, ds: Dataset) -> list[Detection]:
    """Parse a COCO results array against ``ds``; input order is preserved.

    Each record needs ``image_id``, ``category_id``, ``bbox`` and a finite
    ``score``; ids must resolve against ``ds``. All problems are collected
    into a single :class:`ValidationError`.
    """
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ValidationError([f"document: not valid JSON ({e})"]) from e
    if not isinstance(doc, list):
        raise ValidationError(["document: results must be a JSON array"])

    errors: list[str] = []
    out: list[Detection] = []
    for i, rec in enumerate(doc):
        path = f"results[{i}]"
        if not isinstance(rec, dict):
            errors.append(f"{path}: record must be an object")
            continue
        image_id = _req_int(rec, "image_id", path, errors)
        category_id = _req_int(rec, "category_id", path, errors)
        bbox = _parse_bbox(_req(rec, "bbox", path, errors), path, errors)
        score = _req(rec, "score", path, errors)
        if score is not None and not _is_num(score):
            errors.append(f"{path}: score must be a finite number, got {score!r}")
            score = 0.0
        if image_id not in ds.images_by_id:
            errors.append(f"{path}: unknown image_id {image_id}")
        if category_id not in ds.categories_by_id:
            errors.append(f"{path}: unknown category_id {category_id}")
        if bbox.w <= 0 or bbox.h <= 0:
            errors.append(f"{path}: non-positive box width/height (w={bbox.w}, h={bbox.h})")
        out.append(Detection(
            image_id=image_id,
            category_id=category_id,
            bbox=bbox,
            score=float(score) if score is not None else 0.0,
        ))

    if errors:
        raise ValidationError(errors)
    return out
