"""refexpgen: automated referring-expression dataset engine.

Turns images + object detections into REC/REG dataset records by fanning
instance crops out to several vision-language describer backends, merging the
candidate descriptions, and disambiguating duplicates with recursive spatial
region labels that guarantee per-image uniqueness.
"""

from .backends import (
    BackendKind,
    BackendSpec,
    Prompt,
    TimedDescription,
    build_generation_prompt,
    build_merge_prompt,
    mock_description,
    query,
)
from .config import ConfigError, PipelineConfig, load_config
from .ensemble import CandidateSet, MergedDescription, baseline_merge, generate_candidates, merge_candidates
from .export import DatasetRecord, Provenance, read_dataset, validate_uniqueness, write_dataset
from .geometry import BBox, Direction, Frame, Instance, RegionLabel, Ring, Role, bbox_center, normalized_offset
from .ingest import (
    CropSpec,
    DetectionRecord,
    RoleTaxonomy,
    classify_role,
    default_taxonomy,
    filter_by_confidence,
    make_crop_spec,
    parse_detections,
)
from .pipeline import run_pipeline
from .spatial import (
    RegionAssignment,
    SpatialConfig,
    assign_region,
    augment_descriptions,
    group_duplicates,
    refine,
    render_spatial_phrase,
)
from .stats import BackendStats, Histogram, length_stats, throughput_estimate, word_count_histogram

__version__ = "0.1.0"
