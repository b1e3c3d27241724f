"""End-to-end pipeline stages and the intermediate file formats that chain them.

Stages compose via files so the CLI subcommands are equivalent to one `run`:

    detections.json --ingest--> instances.json --generate--> instances.json
                    --augment--> instances.json --export--> dataset.jsonl

The instances file is JSON: a list of per-image objects, each carrying the
image extent plus its instances (with role, description, and provenance).
Candidate descriptions stream to a JSONL sidecar consumed by `stats`.

Output bytes never depend on scheduling: images are processed by a bounded
worker pool, then every output is assembled in sorted (image_id, instance_id)
order.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backends import BackendClient, BackendSpec, TimedDescription, make_mock_spec
from .config import ConfigError, PipelineConfig
from .ensemble import AllBackendsFailed, MergeFailed, generate_candidates, merge_candidates
from .export import DatasetRecord, Provenance, write_dataset
from .geometry import BBox, Frame, Instance, Role
from .ingest import (
    DetectionRecord,
    RoleTaxonomy,
    classify_role,
    default_taxonomy,
    filter_by_confidence,
    make_crop_spec,
    parse_detections,
)
from .spatial import SpatialConfig, augment_with_assignments, group_duplicates
from .stats import build_report, render_histogram_figure, report_paths, write_histogram_csv, write_report_json

logger = logging.getLogger(__name__)


@dataclass
class InstanceState:
    """One instance plus the provenance accumulated across stages."""

    instance: Instance
    describers: tuple[str, ...] = ()
    merger: str = ""
    spa_path: tuple[str, ...] = ()


@dataclass
class ImageSet:
    """All pipeline state for one image."""

    image_id: str
    image_path: str
    width: float
    height: float
    items: list[InstanceState] = field(default_factory=list)

    def frame(self) -> Frame:
        return Frame(width=self.width, height=self.height)

    def record(self) -> DetectionRecord:
        return DetectionRecord(
            image_id=self.image_id,
            image_path=self.image_path,
            image_width=self.width,
            image_height=self.height,
            detections=(),
        )


def _sorted_images(images: list[ImageSet]) -> list[ImageSet]:
    out = []
    for img in sorted(images, key=lambda i: i.image_id):
        img.items.sort(key=lambda s: s.instance.instance_id)
        out.append(img)
    return out


def write_instances_file(images: list[ImageSet], path: str | Path) -> None:
    doc = []
    for img in _sorted_images(images):
        doc.append(
            {
                "image_id": img.image_id,
                "image_path": img.image_path,
                "width": img.width,
                "height": img.height,
                "instances": [
                    {
                        "instance_id": s.instance.instance_id,
                        "bbox": s.instance.bbox.as_list(),
                        "category": s.instance.category,
                        "confidence": s.instance.confidence,
                        "role": s.instance.role.value,
                        "description": s.instance.description,
                        "provenance": {
                            "describers": list(s.describers),
                            "merger": s.merger,
                            "spa_path": list(s.spa_path),
                        },
                    }
                    for s in img.items
                ],
            }
        )
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", "utf-8")


def read_instances_file(path: str | Path) -> list[ImageSet]:
    doc = json.loads(Path(path).read_text("utf-8"))
    images = []
    for entry in doc:
        items = []
        for raw in entry["instances"]:
            prov = raw.get("provenance", {})
            items.append(
                InstanceState(
                    instance=Instance(
                        instance_id=raw["instance_id"],
                        image_id=entry["image_id"],
                        bbox=BBox(*raw["bbox"]),
                        category=raw["category"],
                        confidence=raw["confidence"],
                        role=Role(raw.get("role", "unknown")),
                        description=raw.get("description", ""),
                    ),
                    describers=tuple(prov.get("describers", ())),
                    merger=prov.get("merger", ""),
                    spa_path=tuple(prov.get("spa_path", ())),
                )
            )
        images.append(
            ImageSet(
                image_id=entry["image_id"],
                image_path=entry["image_path"],
                width=entry["width"],
                height=entry["height"],
                items=items,
            )
        )
    return images


def stage_ingest(
    input_path: str | Path,
    *,
    taxonomy: RoleTaxonomy | None = None,
    threshold: float = 0.5,
) -> tuple[list[ImageSet], dict]:
    """Parse detections, filter by confidence, attach roles."""
    taxonomy = taxonomy or default_taxonomy()
    with open(input_path, "rb") as fh:
        records = parse_detections(fh)

    images: list[ImageSet] = []
    total = kept = 0
    for rec in records:
        instances = rec.instances()
        total += len(instances)
        filtered = filter_by_confidence(instances, threshold)
        kept += len(filtered)
        items = [
            InstanceState(
                instance=replace(inst, role=classify_role(inst.category, taxonomy))
            )
            for inst in filtered
        ]
        images.append(
            ImageSet(
                image_id=rec.image_id,
                image_path=rec.image_path,
                width=rec.image_width,
                height=rec.image_height,
                items=items,
            )
        )
    counts = {"images": len(images), "instances_total": total, "instances_kept": kept,
              "instances_dropped": total - kept}
    return _sorted_images(images), counts


@dataclass
class CandidateRow:
    """One line of the candidates JSONL sidecar."""

    instance_id: str
    backend_name: str
    kind: str  # "describer" | "merger"
    text: str
    elapsed: float
    word_count: int

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "backend_name": self.backend_name,
            "kind": self.kind,
            "text": self.text,
            "elapsed": self.elapsed,
            "word_count": self.word_count,
        }


def write_candidates_file(rows: list[CandidateRow], path: str | Path) -> None:
    lines = [json.dumps(r.to_json(), ensure_ascii=False) for r in rows]
    Path(path).write_text("".join(line + "\n" for line in lines), "utf-8")


def read_candidates_file(path: str | Path) -> list[CandidateRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                rows.append(CandidateRow(**obj))
    return rows


def candidate_rows_to_descriptions(
    rows: list[CandidateRow],
) -> tuple[list[TimedDescription], list[TimedDescription]]:
    """Split sidecar rows into (describer, merger) description lists."""
    describer, merger = [], []
    for r in rows:
        td = TimedDescription(
            backend_name=r.backend_name, text=r.text, elapsed=r.elapsed, word_count=r.word_count
        )
        (merger if r.kind == "merger" else describer).append(td)
    return describer, merger


def stage_generate(
    images: list[ImageSet],
    cfg: PipelineConfig,
    *,
    mock: bool = False,
) -> tuple[list[ImageSet], list[CandidateRow], list[dict]]:
    """Describe and merge every instance; failed instances drop with a note.

    Images are processed by a pool of ``cfg.workers`` threads; per instance the
    describers are queried concurrently. Output ordering is restored afterward.
    """
    describers = list(cfg.describers)
    merger = cfg.merger
    if mock:
        describers = [make_mock_spec(d.name, cfg.seed) for d in describers]
        merger = make_mock_spec(merger.name, cfg.seed)

    clients: dict[BackendSpec, BackendClient] = {
        spec: BackendClient(spec) for spec in describers + [merger]
    }
    client_for = clients.__getitem__
    describer_names = tuple(d.name for d in describers)

    def process_image(img: ImageSet) -> tuple[ImageSet, list[CandidateRow], list[dict]]:
        rows: list[CandidateRow] = []
        failures: list[dict] = []
        surviving: list[InstanceState] = []
        for state in img.items:
            inst = state.instance
            crop = make_crop_spec(inst, img.record(), cfg.crop_padding)
            try:
                cs = generate_candidates(inst, crop, describers, client_for=client_for)
            except AllBackendsFailed as exc:
                failures.append({"stage": "generate", "instance_id": inst.instance_id,
                                 "error": str(exc)})
                continue
            for td in cs.non_gap():
                rows.append(
                    CandidateRow(inst.instance_id, td.backend_name, "describer",
                                 td.text, td.elapsed, td.word_count)
                )
            for spec, cand in zip(describers, cs.candidates):
                if cand is None:
                    failures.append({"stage": "describe", "instance_id": inst.instance_id,
                                     "backend": spec.name, "error": "backend failed"})
            try:
                merged = merge_candidates(
                    cs, merger, client_for=client_for, instruction=cfg.merge_instruction
                )
            except MergeFailed as exc:
                failures.append({"stage": "merge", "instance_id": inst.instance_id,
                                 "error": str(exc)})
                continue
            rows.append(
                CandidateRow(inst.instance_id, merger.name, "merger", merged.text,
                             merged.elapsed, len(merged.text.split()))
            )
            surviving.append(
                InstanceState(
                    instance=replace(inst, description=merged.text),
                    describers=describer_names,
                    merger=merger.name,
                    spa_path=state.spa_path,
                )
            )
        img_out = ImageSet(img.image_id, img.image_path, img.width, img.height, surviving)
        return img_out, rows, failures

    results: dict[str, tuple[ImageSet, list[CandidateRow], list[dict]]] = {}
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for img_out, rows, failures in pool.map(process_image, images):
            results[img_out.image_id] = (img_out, rows, failures)

    out_images: list[ImageSet] = []
    out_rows: list[CandidateRow] = []
    out_failures: list[dict] = []
    for image_id in sorted(results):
        img_out, rows, failures = results[image_id]
        out_images.append(img_out)
        out_rows.extend(rows)
        out_failures.extend(failures)
    out_images = _sorted_images(out_images)
    out_rows.sort(key=lambda r: (r.instance_id, r.kind, r.backend_name))
    return out_images, out_rows, out_failures


def stage_augment(
    images: list[ImageSet], spa_cfg: SpatialConfig
) -> tuple[list[ImageSet], int]:
    """Resolve duplicate descriptions per image; returns the group count."""
    out: list[ImageSet] = []
    groups_resolved = 0
    for img in images:
        instances = [s.instance for s in img.items]
        groups_resolved += len(group_duplicates(instances))
        augmented, assignments = augment_with_assignments(instances, img.frame(), spa_cfg)
        items = []
        for state, inst in zip(img.items, augmented):
            a = assignments.get(inst.instance_id)
            spa_path = tuple(label.word for label in a.path) if a else state.spa_path
            items.append(replace(state, instance=inst, spa_path=spa_path))
        out.append(ImageSet(img.image_id, img.image_path, img.width, img.height, items))
    return _sorted_images(out), groups_resolved


def dataset_records(images: list[ImageSet]) -> list[DatasetRecord]:
    records = []
    for img in _sorted_images(images):
        for s in img.items:
            records.append(
                DatasetRecord(
                    image_id=img.image_id,
                    image_path=img.image_path,
                    bbox=s.instance.bbox,
                    category=s.instance.category,
                    expression=s.instance.description,
                    provenance=Provenance(
                        instance_id=s.instance.instance_id,
                        describers=s.describers,
                        merger=s.merger,
                        spa_path=s.spa_path,
                    ),
                )
            )
    return records


def write_stats_outputs(
    rows: list[CandidateRow],
    output_path: str | Path,
    *,
    bin_width: int = 2,
    backend_order: list[str] | None = None,
) -> dict:
    """Emit the stats report JSON, histogram CSV, and histogram figure."""
    describer, merger = candidate_rows_to_descriptions(rows)
    report = build_report(describer, merger, bin_width=bin_width, backend_order=backend_order)
    paths = report_paths(output_path)
    write_report_json(report, paths["stats"])
    write_histogram_csv(report, paths["histogram_csv"])
    render_histogram_figure(report, paths["histogram_png"])
    return report


def run_pipeline(cfg: PipelineConfig, *, mode: str = "rec", mock: bool = False) -> dict:
    """Ingest -> describe/merge -> spatially disambiguate -> export -> stats.

    Returns the run summary. With mock backends and a fixed seed the emitted
    files are byte-identical across runs.
    """
    if not cfg.input_path:
        raise ConfigError("input_path", "missing")
    if not cfg.output_path:
        raise ConfigError("output_path", "missing")

    taxonomy = (
        RoleTaxonomy.from_file(cfg.taxonomy_path) if cfg.taxonomy_path else default_taxonomy()
    )
    images, counts = stage_ingest(
        cfg.input_path, taxonomy=taxonomy, threshold=cfg.confidence_threshold
    )
    images, rows, failures = stage_generate(images, cfg, mock=mock)
    images, groups_resolved = stage_augment(images, cfg.spa)

    records = dataset_records(images)
    out_path = Path(cfg.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(records, out_path, mode=mode)
    describer_order = [d.name for d in cfg.describers]
    write_stats_outputs(rows, out_path, backend_order=describer_order)
    paths = report_paths(out_path)

    summary = {
        **counts,
        "instances_described": sum(len(img.items) for img in images),
        "duplicate_groups_resolved": groups_resolved,
        "failures": failures,
        "dataset_path": str(out_path),
        "stats_path": str(paths["stats"]),
        "histogram_csv_path": str(paths["histogram_csv"]),
        "histogram_figure_path": str(paths["histogram_png"]),
        "mode": mode,
    }
    if failures:
        logger.warning("pipeline recorded %d failure(s)", len(failures))
    return summary
