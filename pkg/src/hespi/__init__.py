"""Herbarium specimen sheet extraction pipeline."""

from .core import (
    BoundingBox,
    Detection,
    LabelFieldClass,
    LabelRecord,
    MATCHABLE_FIELDS,
    SheetComponentClass,
    SheetRecord,
    WritingType,
    crop,
    select_primary_labels,
)
from .matcher import (
    EngineKind,
    FieldTranscription,
    MatcherConfig,
    MatchResult,
    best_match,
    gestalt_similarity,
    normalize_field,
    select_engine,
)
from .reference import NameIndex, load_index, load_reference_dir
from .pipeline import PipelineConfig, RunSummary, process_batch, process_sheet

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Detection",
    "EngineKind",
    "FieldTranscription",
    "LabelFieldClass",
    "LabelRecord",
    "MATCHABLE_FIELDS",
    "MatchResult",
    "MatcherConfig",
    "NameIndex",
    "PipelineConfig",
    "RunSummary",
    "SheetComponentClass",
    "SheetRecord",
    "WritingType",
    "best_match",
    "crop",
    "gestalt_similarity",
    "load_index",
    "load_reference_dir",
    "normalize_field",
    "process_batch",
    "process_sheet",
    "select_engine",
    "select_primary_labels",
]
