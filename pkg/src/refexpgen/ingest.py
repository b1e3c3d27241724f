"""Detection-record parsing, confidence filtering, role tagging, crop specs.

Input format (JSON, top-level array, one entry per image):

    [{"image_id": str, "image_path": str, "width": int, "height": int,
      "detections": [{"bbox": [x_min, y_min, x_max, y_max],
                      "category": str, "confidence": float}]}]

Taxonomy file format: ``{"subject": [str, ...], "object": [str, ...]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import IO, Mapping

from .geometry import BBox, Frame, GeometryError, Instance, Role


class SchemaError(ValueError):
    """Detection input does not match the documented schema.

    ``path`` points at the offending element, e.g. ``[2].detections[0].bbox``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    category: str
    confidence: float


@dataclass(frozen=True)
class DetectionRecord:
    """All detections of one image, plus the image extent they live in."""

    image_id: str
    image_path: str
    image_width: float
    image_height: float
    detections: tuple[Detection, ...]

    def frame(self) -> Frame:
        return Frame(width=self.image_width, height=self.image_height)

    def instances(self) -> list[Instance]:
        """Detections as instances, ids assigned ``{image_id}#{index}`` in input order."""
        return [
            Instance(
                instance_id=f"{self.image_id}#{i}",
                image_id=self.image_id,
                bbox=d.bbox,
                category=d.category,
                confidence=d.confidence,
            )
            for i, d in enumerate(self.detections)
        ]


@dataclass(frozen=True)
class CropSpec:
    """A crop request: the (already padded and clamped) region of an image file."""

    image_path: str
    bbox: BBox
    padding: float = 0.0


@dataclass(frozen=True)
class RoleTaxonomy:
    """Category -> role lookup table; unmapped categories fall back to UNKNOWN."""

    mapping: Mapping[str, Role]

    @classmethod
    def from_lists(cls, subject: list[str], object_: list[str]) -> "RoleTaxonomy":
        mapping: dict[str, Role] = {}
        for cat in subject:
            mapping[_normalize_category(cat)] = Role.SUBJECT
        for cat in object_:
            mapping[_normalize_category(cat)] = Role.OBJECT
        return cls(mapping=mapping)

    @classmethod
    def from_file(cls, path: str) -> "RoleTaxonomy":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise SchemaError("$", "taxonomy file must be a JSON object")
        subject = raw.get("subject", [])
        object_ = raw.get("object", [])
        for key, val in (("subject", subject), ("object", object_)):
            if not isinstance(val, list) or not all(isinstance(c, str) for c in val):
                raise SchemaError(f"$.{key}", "must be an array of strings")
        return cls.from_lists(subject, object_)


def _normalize_category(category: str) -> str:
    return category.strip().lower()


def default_taxonomy() -> RoleTaxonomy:
    """The taxonomy shipped with the package (editable via a taxonomy file)."""
    raw = json.loads(
        resources.files("refexpgen").joinpath("data/taxonomy.json").read_text("utf-8")
    )
    return RoleTaxonomy.from_lists(raw["subject"], raw["object"])


def classify_role(category: str, taxonomy: RoleTaxonomy) -> Role:
    """Exact-match lookup after lowercasing and trimming; UNKNOWN when absent."""
    return taxonomy.mapping.get(_normalize_category(category), Role.UNKNOWN)


def _require(obj: dict, key: str, types, path: str):
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing field")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise SchemaError(f"{path}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def parse_detections(raw: bytes | str | IO) -> list[DetectionRecord]:
    """Parse and validate a detection JSON document.

    Raises:
        SchemaError: missing field or wrong type, with the JSON path.
        GeometryError: inverted or out-of-bounds box, naming the offending index.
    """
    if hasattr(raw, "read"):
        raw = raw.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaError("$", "top level must be an array of image entries")

    records: list[DetectionRecord] = []
    seen_image_ids: set[str] = set()
    for i, entry in enumerate(doc):
        path = f"[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(path, "image entry must be an object")
        image_id = _require(entry, "image_id", str, path)
        if image_id in seen_image_ids:
            raise SchemaError(f"{path}.image_id", f"duplicate image_id {image_id!r}")
        seen_image_ids.add(image_id)
        image_path = _require(entry, "image_path", str, path)
        width = float(_require(entry, "width", (int, float), path))
        height = float(_require(entry, "height", (int, float), path))
        if width <= 0 or height <= 0:
            raise SchemaError(path, f"image dimensions must be positive, got {width}x{height}")
        dets_raw = _require(entry, "detections", list, path)

        detections: list[Detection] = []
        for j, det in enumerate(dets_raw):
            dpath = f"{path}.detections[{j}]"
            if not isinstance(det, dict):
                raise SchemaError(dpath, "detection must be an object")
            bbox_raw = _require(det, "bbox", list, dpath)
            if len(bbox_raw) != 4 or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox_raw
            ):
                raise SchemaError(f"{dpath}.bbox", "bbox must be [x_min, y_min, x_max, y_max]")
            category = _require(det, "category", str, dpath)
            confidence = float(_require(det, "confidence", (int, float), dpath))
            if not 0.0 <= confidence <= 1.0:
                raise SchemaError(f"{dpath}.confidence", f"must be in [0, 1], got {confidence}")
            try:
                bbox = BBox(*(float(v) for v in bbox_raw))
            except GeometryError as exc:
                raise GeometryError(f"{dpath}.bbox: {exc}") from exc
            if bbox.x_max > width or bbox.y_max > height:
                raise GeometryError(
                    f"{dpath}.bbox: box {bbox.as_list()} exceeds image bounds {width}x{height}"
                )
            detections.append(Detection(bbox=bbox, category=category, confidence=confidence))

        records.append(
            DetectionRecord(
                image_id=image_id,
                image_path=image_path,
                image_width=width,
                image_height=height,
                detections=tuple(detections),
            )
        )
    return records


def filter_by_confidence(instances: list[Instance], threshold: float = 0.5) -> list[Instance]:
    """Keep instances with confidence *strictly greater* than the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold!r}")
    return [inst for inst in instances if inst.confidence > threshold]


def make_crop_spec(inst: Instance, rec: DetectionRecord, padding: float = 0.0) -> CropSpec:
    """Expand the instance box by ``padding`` on every side, clamped to the image."""
    if inst.image_id != rec.image_id:
        raise ValueError(
            f"instance {inst.instance_id!r} belongs to image {inst.image_id!r}, "
            f"not {rec.image_id!r}"
        )
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding!r}")
    b = inst.bbox
    padded = BBox(
        x_min=max(0.0, b.x_min - padding),
        y_min=max(0.0, b.y_min - padding),
        x_max=min(rec.image_width, b.x_max + padding),
        y_max=min(rec.image_height, b.y_max + padding),
    )
    return CropSpec(image_path=rec.image_path, bbox=padded, padding=padding)
