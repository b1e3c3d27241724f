"""Dataset record serialization and the per-image uniqueness gate.

Records are written as JSONL with a fixed key order so outputs are
diff-friendly and byte-deterministic. Grounding-style datasets ("rec" mode)
must have per-image-unique (category, expression) pairs; generation-style
datasets ("reg" mode) tolerate duplicates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .geometry import BBox


class UniquenessViolation(Exception):
    """A rec-mode dataset contains duplicate expressions within an image."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        summary = "; ".join(
            f"{v.image_id}/{v.category}: {len(v.instance_ids)} records share {v.expression!r}"
            for v in violations[:5]
        )
        super().__init__(f"{len(violations)} uniqueness violation(s): {summary}")


@dataclass(frozen=True)
class Provenance:
    """Audit trail from expression back to the models and regions behind it."""

    instance_id: str
    describers: tuple[str, ...] = ()
    merger: str = ""
    spa_path: tuple[str, ...] = ()


@dataclass(frozen=True)
class DatasetRecord:
    image_id: str
    image_path: str
    bbox: BBox
    category: str
    expression: str
    provenance: Provenance

    def __post_init__(self) -> None:
        if not self.expression:
            raise ValueError(
                f"record {self.provenance.instance_id!r} has an empty expression"
            )


@dataclass(frozen=True)
class Violation:
    image_id: str
    category: str
    expression: str
    instance_ids: tuple[str, ...]


VALID_MODES = ("rec", "reg")


def validate_uniqueness(records: list[DatasetRecord]) -> list[Violation]:
    """Every (image_id, category, expression) triple occurring more than once.

    An empty report means the records form a valid rec-mode set. Identical
    expressions across *different* images are fine.
    """
    by_key: dict[tuple[str, str, str], list[str]] = {}
    for rec in records:
        key = (rec.image_id, rec.category, rec.expression)
        by_key.setdefault(key, []).append(rec.provenance.instance_id)
    return [
        Violation(image_id=k[0], category=k[1], expression=k[2], instance_ids=tuple(ids))
        for k, ids in by_key.items()
        if len(ids) > 1
    ]


def record_to_json(rec: DatasetRecord) -> dict:
    return {
        "image_id": rec.image_id,
        "image_path": rec.image_path,
        "bbox": rec.bbox.as_list(),
        "category": rec.category,
        "expression": rec.expression,
        "provenance": {
            "instance_id": rec.provenance.instance_id,
            "describers": list(rec.provenance.describers),
            "merger": rec.provenance.merger,
            "spa_path": list(rec.provenance.spa_path),
        },
    }


def record_from_json(obj: dict) -> DatasetRecord:
    prov = obj["provenance"]
    return DatasetRecord(
        image_id=obj["image_id"],
        image_path=obj["image_path"],
        bbox=BBox(*obj["bbox"]),
        category=obj["category"],
        expression=obj["expression"],
        provenance=Provenance(
            instance_id=prov["instance_id"],
            describers=tuple(prov["describers"]),
            merger=prov["merger"],
            spa_path=tuple(prov["spa_path"]),
        ),
    )


def write_dataset(records: list[DatasetRecord], path: str | Path, mode: str = "rec") -> None:
    """Write one JSON object per line, UTF-8, fixed key order.

    Raises:
        UniquenessViolation: in "rec" mode, when expressions collide per image.
    """
    if mode not in VALID_MODES:
        raise ValueError(f"mode must be one of {VALID_MODES}, got {mode!r}")
    if mode == "rec":
        violations = validate_uniqueness(records)
        if violations:
            raise UniquenessViolation(violations)
    lines = [json.dumps(record_to_json(r), ensure_ascii=False) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), "utf-8")


def read_dataset(path: str | Path) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    return records
