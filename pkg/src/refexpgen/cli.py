"""Command-line surface: stage subcommands plus the end-to-end `run`.

Exit codes: 0 success, 1 validation failure, 2 config/usage error,
3 runtime/backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .backends import BackendError
from .config import ConfigError, load_config, with_overrides
from .export import UniquenessViolation, read_dataset, validate_uniqueness, write_dataset
from .geometry import GeometryError
from .ingest import RoleTaxonomy, SchemaError, default_taxonomy
from .pipeline import (
    dataset_records,
    read_candidates_file,
    read_instances_file,
    run_pipeline,
    stage_augment,
    stage_generate,
    stage_ingest,
    write_candidates_file,
    write_instances_file,
    write_stats_outputs,
)
from .spatial import SpatialConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_cfg(args):
    if not args.config:
        raise ConfigError("config", "a --config file is required for this command")
    cfg = load_config(args.config)
    return with_overrides(
        cfg,
        input_path=getattr(args, "input", None),
        output_path=getattr(args, "output", None),
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
    )


def _taxonomy_from(args, cfg=None) -> RoleTaxonomy:
    path = getattr(args, "taxonomy", None) or (cfg.taxonomy_path if cfg else None)
    return RoleTaxonomy.from_file(path) if path else default_taxonomy()


def cmd_ingest(args) -> int:
    if args.config:
        cfg = _load_cfg(args)
        threshold = cfg.confidence_threshold
        taxonomy = _taxonomy_from(args, cfg)
        input_path = cfg.input_path
    else:
        threshold = args.threshold
        taxonomy = _taxonomy_from(args)
        input_path = args.input
    if not input_path:
        raise ConfigError("input_path", "missing")
    images, counts = stage_ingest(input_path, taxonomy=taxonomy, threshold=threshold)
    write_instances_file(images, args.output)
    print(json.dumps(counts))
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    images = read_instances_file(args.input)
    images, rows, failures = stage_generate(images, cfg, mock=args.mock)
    write_instances_file(images, args.output)
    if args.candidates:
        write_candidates_file(rows, args.candidates)
    print(json.dumps({"instances_described": sum(len(i.items) for i in images),
                      "failures": failures}))
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_augment(args) -> int:
    spa_cfg = load_config(args.config).spa if args.config else SpatialConfig()
    images = read_instances_file(args.input)
    images, groups = stage_augment(images, spa_cfg)
    write_instances_file(images, args.output)
    print(json.dumps({"duplicate_groups_resolved": groups}))
    return EXIT_OK


def cmd_stats(args) -> int:
    from .stats import report_paths

    rows = read_candidates_file(args.input)
    report = write_stats_outputs(rows, args.output, bin_width=args.bin_width)
    paths = report_paths(args.output)
    print(json.dumps({
        "corpus_size": report["corpus_size"],
        "stats_path": str(paths["stats"]),
        "histogram_csv_path": str(paths["histogram_csv"]),
        "histogram_figure_path": str(paths["histogram_png"]),
    }))
    return EXIT_OK


def cmd_validate(args) -> int:
    records = read_dataset(args.input)
    violations = validate_uniqueness(records)
    for v in violations:
        print(
            f"violation: image={v.image_id} category={v.category!r} "
            f"expression={v.expression!r} instances={list(v.instance_ids)}"
        )
    print(json.dumps({"records": len(records), "violations": len(violations)}))
    return EXIT_VALIDATION if violations else EXIT_OK


def cmd_export(args) -> int:
    images = read_instances_file(args.input)
    records = dataset_records(images)
    write_dataset(records, args.output, mode=args.mode)
    print(json.dumps({"records": len(records), "dataset": str(args.output)}))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    summary = run_pipeline(cfg, mode=args.mode, mock=args.mock)
    print(json.dumps(summary, indent=2))
    return EXIT_RUNTIME if summary["failures"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refexpgen",
        description="Referring-expression dataset engine: describe, merge, "
        "spatially disambiguate, export.",
    )
    parser.add_argument("--verbose", action="store_true", help="log retries and failures")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse detections, filter, attach roles")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--input", help="detection JSON file")
    p.add_argument("--output", required=True, help="instances JSON out")
    p.add_argument("--taxonomy", help="taxonomy JSON (default: packaged)")
    p.add_argument("--threshold", type=float, default=0.5, help="confidence cutoff (strict >)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="describe each instance and merge candidates")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="instances JSON from ingest")
    p.add_argument("--output", required=True, help="instances JSON with descriptions")
    p.add_argument("--candidates", help="candidates JSONL sidecar for stats")
    p.add_argument("--mock", action="store_true", help="force deterministic mock backends")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--workers", type=int, help="override config workers")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("augment", help="spatially disambiguate duplicate descriptions")
    p.add_argument("--config", help="pipeline config JSON (for the spa section)")
    p.add_argument("--input", required=True, help="instances JSON with descriptions")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("stats", help="corpus statistics from a candidates JSONL")
    p.add_argument("--input", required=True, help="candidates JSONL")
    p.add_argument("--output", required=True,
                   help="base path; writes .stats.json/.histogram.csv/.histogram.png beside it")
    p.add_argument("--bin-width", type=int, default=2)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("validate", help="check per-image expression uniqueness")
    p.add_argument("--input", required=True, help="dataset JSONL")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export", help="write dataset JSONL from instances JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=["rec", "reg"], default="rec")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run", help="full pipeline: ingest, generate, augment, export, stats")
    p.add_argument("--config", required=True)
    p.add_argument("--input", help="override config input_path")
    p.add_argument("--output", help="override config output_path")
    p.add_argument("--mode", choices=["rec", "reg"], default="rec")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--mock", action="store_true", help="force deterministic mock backends")
    p.add_argument("--workers", type=int, help="override config workers")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UniquenessViolation as exc:
        print(f"uniqueness violation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BackendError, SchemaError, GeometryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
