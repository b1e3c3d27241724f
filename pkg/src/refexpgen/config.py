"""Pipeline configuration: a single JSON file, env vars only for secrets.

Schema (see README for the full reference):

    {
      "describers": [{"name": str, "kind": "vision_describer"|"mock",
                      "endpoint": str, "timeout"?: s, "max_retries"?: int,
                      "rate_limit"?: rps}, ...],
      "merger": {"name": str, "kind": "text_merger"|"mock", "endpoint": str, ...},
      "confidence_threshold"?: float,
      "crop_padding"?: float,
      "spa"?: {"ring_fractions"?: [f1, f2], "max_depth"?: int, "inflation"?: float},
      "workers"?: int, "seed"?: int,
      "merge_instruction"?: str,
      "taxonomy_path"?: str, "input_path"?: str, "output_path"?: str
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backends import BackendKind, BackendSpec
from .spatial import SpatialConfig


class ConfigError(Exception):
    """Configuration is missing or invalid; ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field {field_name!r}: {message}")


@dataclass(frozen=True)
class PipelineConfig:
    describers: tuple[BackendSpec, ...]
    merger: BackendSpec
    confidence_threshold: float = 0.5
    crop_padding: float = 0.0
    spa: SpatialConfig = field(default_factory=SpatialConfig)
    workers: int = 4
    seed: int = 0
    merge_instruction: str | None = None
    taxonomy_path: str | None = None
    input_path: str | None = None
    output_path: str | None = None

    def __post_init__(self) -> None:
        if not self.describers:
            raise ConfigError("describers", "at least one describer is required")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError("confidence_threshold", "must be in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")


_REQUIRED = object()


def _get(obj: dict, key: str, types, path: str, default=_REQUIRED):
    if key not in obj:
        if default is _REQUIRED:
            raise ConfigError(f"{path}{key}", "missing")
        return default
    value = obj[key]
    if value is None and default is not _REQUIRED:
        return default
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(f"{path}{key}", f"expected {types}, got {type(value).__name__}")
    return value


def _parse_backend(obj, path: str) -> BackendSpec:
    if not isinstance(obj, dict):
        raise ConfigError(path, "backend must be an object")
    prefix = path + "."
    name = _get(obj, "name", str, prefix)
    kind_raw = _get(obj, "kind", str, prefix)
    try:
        kind = BackendKind(kind_raw)
    except ValueError:
        valid = ", ".join(k.value for k in BackendKind)
        raise ConfigError(f"{prefix}kind", f"must be one of: {valid}") from None
    endpoint = _get(obj, "endpoint", str, prefix)
    try:
        return BackendSpec(
            name=name,
            kind=kind,
            endpoint=endpoint,
            timeout=float(_get(obj, "timeout", (int, float), prefix, 30.0)),
            max_retries=int(_get(obj, "max_retries", int, prefix, 3)),
            rate_limit=float(_get(obj, "rate_limit", (int, float), prefix, 5.0)),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_spa(obj, path: str) -> SpatialConfig:
    if not isinstance(obj, dict):
        raise ConfigError(path, "must be an object")
    prefix = path + "."
    fractions = _get(obj, "ring_fractions", list, prefix, [1.0 / 3.0, 2.0 / 3.0])
    if len(fractions) != 2 or not all(isinstance(v, (int, float)) for v in fractions):
        raise ConfigError(f"{prefix}ring_fractions", "must be [f1, f2]")
    try:
        return SpatialConfig(
            ring_fractions=(float(fractions[0]), float(fractions[1])),
            max_depth=int(_get(obj, "max_depth", int, prefix, 8)),
            inflation=float(_get(obj, "inflation", (int, float), prefix, 0.1)),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("$", "config must be a JSON object")
    describers_raw = _get(doc, "describers", list, "")
    if not describers_raw:
        raise ConfigError("describers", "at least one describer is required")
    describers = tuple(
        _parse_backend(d, f"describers[{i}]") for i, d in enumerate(describers_raw)
    )
    merger = _parse_backend(_get(doc, "merger", dict, ""), "merger")
    spa = _parse_spa(doc.get("spa", {}), "spa")
    return PipelineConfig(
        describers=describers,
        merger=merger,
        confidence_threshold=float(_get(doc, "confidence_threshold", (int, float), "", 0.5)),
        crop_padding=float(_get(doc, "crop_padding", (int, float), "", 0.0)),
        spa=spa,
        workers=int(_get(doc, "workers", int, "", 4)),
        seed=int(_get(doc, "seed", int, "", 0)),
        merge_instruction=_get(doc, "merge_instruction", str, "", None),
        taxonomy_path=_get(doc, "taxonomy_path", str, "", None),
        input_path=_get(doc, "input_path", str, "", None),
        output_path=_get(doc, "output_path", str, "", None),
    )


def load_config(path: str | Path) -> PipelineConfig:
    try:
        raw = Path(path).read_text("utf-8")
    except OSError as exc:
        raise ConfigError("$", f"cannot read config file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON in {path}: {exc}") from exc
    return parse_config(doc)


def with_overrides(
    cfg: PipelineConfig,
    *,
    input_path: str | None = None,
    output_path: str | None = None,
    seed: int | None = None,
    workers: int | None = None,
) -> PipelineConfig:
    """CLI flags win over config-file values."""
    updates = {}
    if input_path is not None:
        updates["input_path"] = input_path
    if output_path is not None:
        updates["output_path"] = output_path
    if seed is not None:
        updates["seed"] = seed
    if workers is not None:
        updates["workers"] = workers
    return replace(cfg, **updates) if updates else cfg
