"""Domain types shared across the pipeline, plus crop geometry over sheet images."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Union

from PIL import Image

if TYPE_CHECKING:
    from .matcher import FieldTranscription


class SheetComponentClass(str, Enum):
    """The 11 component classes detectable on a specimen sheet."""

    PRIMARY_SPECIMEN_LABEL = "primary_specimen_label"
    ORIGINAL_DATA = "original_data"
    ANNOTATION_LABEL = "annotation_label"
    STAMP = "stamp"
    SWING_TAG = "swing_tag"
    ACCESSION_NUMBER = "accession_number"
    SMALL_DATABASE_LABEL = "small_database_label"
    MEDIUM_DATABASE_LABEL = "medium_database_label"
    FULL_DATABASE_LABEL = "full_database_label"
    SWATCH = "swatch"
    SCALE = "scale"


class LabelFieldClass(str, Enum):
    """The 12 data fields detectable on a primary specimen label.

    Declaration order is canonical: CSV columns, prompt field listings and
    crop numbering all follow it.
    """

    FAMILY = "family"
    GENUS = "genus"
    SPECIES = "species"
    INFRASPECIFIC_TAXON = "infraspecific_taxon"
    AUTHORITY = "authority"
    COLLECTOR_NUMBER = "collector_number"
    COLLECTOR = "collector"
    LOCALITY = "locality"
    GEOLOCATION = "geolocation"
    YEAR = "year"
    MONTH = "month"
    DAY = "day"


#: Fields that are cross-checked against reference name indices.
MATCHABLE_FIELDS: tuple[LabelFieldClass, ...] = (
    LabelFieldClass.FAMILY,
    LabelFieldClass.GENUS,
    LabelFieldClass.SPECIES,
    LabelFieldClass.AUTHORITY,
)


class WritingType(str, Enum):
    """Five-way classification of the writing on a label."""

    TYPEWRITTEN = "typewritten"
    PRINTED = "printed"
    HANDWRITTEN = "handwritten"
    COMBINATION = "combination"
    EMPTY = "empty"


#: Writing types that fall back to the HTR engine when arbitration ties.
HTR_PREFERRED: frozenset[WritingType] = frozenset(
    {WritingType.HANDWRITTEN, WritingType.COMBINATION}
)

DetectionClass = Union[SheetComponentClass, LabelFieldClass]


class InvalidDetectionError(ValueError):
    """A detection's geometry cannot be applied to the image it came from."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, origin top-left, exclusive lower-right corner."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        if self.x1 < 0 or self.y1 < 0:
            raise ValueError(f"negative coordinates in {self}")
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1


@dataclass(frozen=True)
class Detection:
    """One located component or field: class, pixel box, confidence."""

    class_name: DetectionClass
    box: BoundingBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class LabelRecord:
    """Extraction result for one primary specimen label."""

    label_index: int
    detection: Detection
    crop_path: Path
    writing_type: WritingType
    fields: tuple["FieldTranscription", ...] = ()
    field_crop_paths: Mapping[LabelFieldClass, Path] = field(default_factory=dict)


@dataclass(frozen=True)
class SheetRecord:
    """One sheet's complete extraction result."""

    sheet_id: str
    source_path: Path
    labels: tuple[LabelRecord, ...] = ()
    crop_paths: Mapping[Detection, Path] = field(default_factory=dict)

    @property
    def writing_type(self) -> WritingType | None:
        """Writing type of the highest-confidence label, if any label was found."""
        return self.labels[0].writing_type if self.labels else None


def _round_half_away(value: float) -> int:
    if value >= 0:
        return int(value + 0.5)
    return -int(-value + 0.5)


def crop(image: Image.Image, box: BoundingBox, pad_fraction: float = 0.0) -> Image.Image:
    """Cut the sub-image of ``box`` expanded by ``pad_fraction`` per side, clamped to bounds.

    Padded coordinates are rounded half-away-from-zero. Raises
    InvalidDetectionError when the (unpadded) box lies entirely outside the
    image.
    """
    if pad_fraction < 0:
        raise ValueError(f"pad_fraction must be >= 0, got {pad_fraction}")
    width, height = image.size
    if box.x1 >= width or box.y1 >= height:
        raise InvalidDetectionError(f"box {box} entirely outside {width}x{height} image")

    pad_x = pad_fraction * box.width
    pad_y = pad_fraction * box.height
    x1 = max(0, _round_half_away(box.x1 - pad_x))
    y1 = max(0, _round_half_away(box.y1 - pad_y))
    x2 = min(width, _round_half_away(box.x2 + pad_x))
    y2 = min(height, _round_half_away(box.y2 + pad_y))
    return image.crop((x1, y1, x2, y2))


def select_primary_labels(
    detections: Iterable[Detection], min_confidence: float = 0.25
) -> list[Detection]:
    """All primary-specimen-label detections at or above the threshold.

    Sorted by descending confidence; input order is preserved for equal
    confidences. The position in the returned list is the label's ordinal
    for output naming.
    """
    labels = [
        d
        for d in detections
        if d.class_name == SheetComponentClass.PRIMARY_SPECIMEN_LABEL
        and d.confidence >= min_confidence
    ]
    return sorted(labels, key=lambda d: -d.confidence)


def dedupe_field_detections(detections: Iterable[Detection]) -> list[Detection]:
    """Keep the highest-confidence detection per field class (first wins on ties).

    The result is ordered by LabelFieldClass declaration order; fields are
    semantically singular per label.
    """
    best: dict[LabelFieldClass, Detection] = {}
    for det in detections:
        if not isinstance(det.class_name, LabelFieldClass):
            raise ValueError(f"not a label field detection: {det.class_name}")
        kept = best.get(det.class_name)
        if kept is None or det.confidence > kept.confidence:
            best[det.class_name] = det
    return [best[f] for f in LabelFieldClass if f in best]
