"""Per-sheet orchestration and batch driving."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from PIL import Image, UnidentifiedImageError

from . import engines, report
from .core import (
    MATCHABLE_FIELDS,
    Detection,
    LabelFieldClass,
    LabelRecord,
    SheetComponentClass,
    SheetRecord,
    WritingType,
    crop,
    dedupe_field_detections,
    select_primary_labels,
)
from .engines import AdapterError
from .llm import LlmClient, LlmConfig
from .matcher import (
    EngineKind,
    FieldTranscription,
    MatcherConfig,
    MatchResult,
    best_match,
    normalize_field,
    select_engine,
)
from .reference import NameIndex

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".tif", ".tiff")


class SheetProcessingError(RuntimeError):
    """One sheet could not be processed; the batch continues."""


@dataclass
class PipelineConfig:
    output_dir: Path
    component_detector: engines.DetectorAdapter
    field_detector: engines.DetectorAdapter
    classifier: engines.ClassifierAdapter
    ocr_engine: engines.TextEngineAdapter
    htr_engine: engines.TextEngineAdapter
    indices: Mapping[LabelFieldClass, NameIndex]
    matcher: MatcherConfig = MatcherConfig()
    llm: LlmConfig = LlmConfig(enabled=False)
    workers: int = 1
    min_confidence: float = 0.25
    pad_fraction: float = 0.0
    engine_override: EngineKind | None = None
    # test seam: replaces the HTTP transport of the LLM client
    llm_transport: Callable[[dict], str] | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        self.output_dir = Path(self.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)


@dataclass(frozen=True)
class RunSummary:
    sheets: int
    labels: int
    fields: int
    corrections: int
    failures: int
    failed_sheets: tuple[tuple[str, str], ...] = ()
    manifest: tuple[Path, ...] = ()

    def format_lines(self) -> list[str]:
        lines = [
            f"sheets processed: {self.sheets}",
            f"labels extracted: {self.labels}",
            f"fields transcribed: {self.fields}",
            f"fields corrected: {self.corrections}",
            f"failures: {self.failures}",
        ]
        lines.extend(f"failed sheet {sheet_id}: {reason}" for sheet_id, reason in self.failed_sheets)
        return lines


def collect_images(paths: Iterable[Path], recursive: bool = False) -> list[Path]:
    """Expand the input paths into a sorted list of sheet images."""
    images: list[Path] = []
    for path in paths:
        path = Path(path)
        if path.is_dir():
            entries = path.rglob("*") if recursive else path.iterdir()
            images.extend(
                p for p in entries if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
            )
        else:
            images.append(path)
    return sorted(set(images))


def assign_sheet_ids(image_paths: Sequence[Path]) -> list[tuple[str, Path]]:
    """Filename stems, uniquified in sorted-path order."""
    seen: dict[str, int] = {}
    assigned = []
    for path in image_paths:
        stem = path.stem
        count = seen.get(stem, 0)
        seen[stem] = count + 1
        assigned.append((stem if count == 0 else f"{stem}_{count}", path))
    return assigned


class _CropNamer:
    """Sequential per-class crop numbering within one sheet."""

    def __init__(self, sheet_id: str, sheet_dir: Path):
        self.sheet_id = sheet_id
        self.sheet_dir = sheet_dir
        self._counters: dict[str, int] = {}

    def next_path(self, class_name: str) -> Path:
        ordinal = self._counters.get(class_name, 0)
        self._counters[class_name] = ordinal + 1
        return self.sheet_dir / f"{self.sheet_id}_{class_name}_{ordinal}.jpg"


def _transcribe_field(
    config: PipelineConfig,
    field: LabelFieldClass,
    crop_path: Path,
) -> tuple[str, str, str, str, MatchResult | None, MatchResult | None]:
    """Run both engines on one field crop, normalize, and reference-match."""
    override = config.engine_override
    ocr_text = (
        engines.recognize(config.ocr_engine, crop_path)
        if override in (None, EngineKind.OCR)
        else ""
    )
    htr_text = (
        engines.recognize(config.htr_engine, crop_path)
        if override in (None, EngineKind.HTR)
        else ""
    )
    normalized_ocr = normalize_field(field, ocr_text)
    normalized_htr = normalize_field(field, htr_text)
    ocr_match = htr_match = None
    if field in MATCHABLE_FIELDS and config.matcher.matching_enabled:
        index = config.indices[field]
        if override in (None, EngineKind.OCR):
            ocr_match = best_match(index, normalized_ocr, config.matcher)
        if override in (None, EngineKind.HTR):
            htr_match = best_match(index, normalized_htr, config.matcher)
    return ocr_text, htr_text, normalized_ocr, normalized_htr, ocr_match, htr_match


def _build_transcriptions(
    config: PipelineConfig,
    writing: WritingType,
    raw: list[tuple[LabelFieldClass, str, str, str, str, MatchResult | None, MatchResult | None]],
) -> list[FieldTranscription]:
    if config.engine_override is not None:
        selected = config.engine_override
    else:
        ocr_matches = [entry[5] for entry in raw if entry[5] is not None]
        htr_matches = [entry[6] for entry in raw if entry[6] is not None]
        selected = select_engine(writing, ocr_matches, htr_matches)

    transcriptions = []
    for field, ocr_text, htr_text, norm_ocr, norm_htr, ocr_match, htr_match in raw:
        match = ocr_match if selected is EngineKind.OCR else htr_match
        if match is not None:
            pre_llm = match.final_text
            score = match.score
        else:
            pre_llm = norm_ocr if selected is EngineKind.OCR else norm_htr
            score = None
        transcriptions.append(
            FieldTranscription(
                field=field,
                ocr_text=ocr_text,
                htr_text=htr_text,
                normalized_ocr=norm_ocr,
                normalized_htr=norm_htr,
                ocr_match=ocr_match,
                htr_match=htr_match,
                selected_engine=selected,
                pre_llm_text=pre_llm,
                final_text=pre_llm,
                score=score,
            )
        )
    return transcriptions


def _process_label(
    config: PipelineConfig,
    llm_client: LlmClient,
    namer: _CropNamer,
    label_index: int,
    detection: Detection,
    crop_path: Path,
    crop_paths: dict[Detection, Path],
) -> LabelRecord:
    try:
        writing = engines.classify_label(config.classifier, crop_path)
    except AdapterError as exc:
        logger.warning("classifier failed on %s, defaulting to combination: %s", crop_path, exc)
        writing = WritingType.COMBINATION

    if writing is WritingType.EMPTY:
        return LabelRecord(label_index, detection, crop_path, writing)

    field_detections = engines.detect_fields(config.field_detector, crop_path)
    field_detections = [d for d in field_detections if d.confidence >= config.min_confidence]
    field_detections = dedupe_field_detections(field_detections)

    label_image = Image.open(crop_path)
    field_crop_paths: dict[LabelFieldClass, Path] = {}
    raw_results = []
    for field_det in field_detections:
        field = field_det.class_name
        assert isinstance(field, LabelFieldClass)
        path = namer.next_path(field.value)
        report.save_crop(crop(label_image, field_det.box, config.pad_fraction), path)
        crop_paths[field_det] = path
        field_crop_paths[field] = path
        raw_results.append((field, *_transcribe_field(config, field, path)))

    transcriptions = _build_transcriptions(config, writing, raw_results)
    transcriptions = llm_client.correct_fields(crop_path, transcriptions)
    return LabelRecord(
        label_index,
        detection,
        crop_path,
        writing,
        tuple(transcriptions),
        field_crop_paths,
    )


def process_sheet(
    config: PipelineConfig,
    image_path: Path,
    sheet_id: str | None = None,
    llm_client: LlmClient | None = None,
) -> SheetRecord:
    """Run the full extraction flow for one sheet image."""
    image_path = Path(image_path)
    sheet_id = sheet_id if sheet_id is not None else image_path.stem
    if llm_client is None:
        llm_client = LlmClient(config.llm, transport=config.llm_transport)

    try:
        image = Image.open(image_path)
        image.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise SheetProcessingError(f"cannot decode image {image_path}: {exc}") from exc

    try:
        detections = engines.detect_components(config.component_detector, image_path)
    except AdapterError as exc:
        raise SheetProcessingError(f"component detection failed for {image_path}: {exc}") from exc
    detections = [d for d in detections if d.confidence >= config.min_confidence]

    sheet_dir = config.output_dir / sheet_id
    namer = _CropNamer(sheet_id, sheet_dir)
    crop_paths: dict[Detection, Path] = {}
    # crops are numbered per class by descending confidence, matching the
    # ordinal suffix rule for primary labels
    by_class: dict[str, list[Detection]] = {}
    for det in sorted(detections, key=lambda d: -d.confidence):
        by_class.setdefault(det.class_name.value, []).append(det)
    for class_name in sorted(by_class):
        for det in by_class[class_name]:
            path = namer.next_path(class_name)
            report.save_crop(crop(image, det.box, config.pad_fraction), path)
            crop_paths[det] = path

    labels = []
    for label_index, det in enumerate(select_primary_labels(detections, config.min_confidence)):
        try:
            labels.append(
                _process_label(
                    config, llm_client, namer, label_index, det, crop_paths[det], crop_paths
                )
            )
        except AdapterError as exc:
            raise SheetProcessingError(
                f"label {label_index} of {sheet_id} failed: {exc}"
            ) from exc

    return SheetRecord(sheet_id, image_path, tuple(labels), crop_paths)


def process_batch(config: PipelineConfig, image_paths: Sequence[Path]) -> RunSummary:
    """Process all sheets with bounded parallelism and write the aggregate outputs."""
    if not image_paths:
        raise ValueError("no input images")
    assigned = assign_sheet_ids(sorted(Path(p) for p in image_paths))

    llm_config = config.llm
    if llm_config.enabled and not llm_config.api_key and config.llm_transport is None:
        logger.warning("no API key in environment; disabling LLM correction for this run")
        llm_config = replace(llm_config, enabled=False)
    llm_client = LlmClient(llm_config, transport=config.llm_transport)

    records: list[SheetRecord] = []
    failures: list[tuple[str, str]] = []

    def run_one(sheet_id: str, path: Path) -> SheetRecord:
        return process_sheet(config, path, sheet_id, llm_client)

    outcomes: list[tuple[str, SheetRecord | None, str | None]] = []
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            (sheet_id, pool.submit(run_one, sheet_id, path)) for sheet_id, path in assigned
        ]
        for sheet_id, future in futures:
            try:
                outcomes.append((sheet_id, future.result(), None))
            except SheetProcessingError as exc:
                outcomes.append((sheet_id, None, str(exc)))

    for sheet_id, record, error in outcomes:
        if record is not None:
            records.append(record)
        else:
            logger.error("sheet %s failed: %s", sheet_id, error)
            failures.append((sheet_id, error or "unknown error"))

    records.sort(key=lambda r: r.sheet_id)
    manifest = report.write_outputs(records, config.output_dir)

    label_count = sum(len(r.labels) for r in records)
    field_count = sum(len(label.fields) for r in records for label in r.labels)
    correction_count = sum(
        1
        for r in records
        for label in r.labels
        for t in label.fields
        if t.changed_by_matching or t.changed_by_llm
    )
    summary = RunSummary(
        sheets=len(records),
        labels=label_count,
        fields=field_count,
        corrections=correction_count,
        failures=len(failures),
        failed_sheets=tuple(failures),
        manifest=tuple(manifest),
    )
    log_lines = [f"sheet {sheet_id}: {'ok' if record else 'FAILED: ' + str(error)}"
                 for sheet_id, record, error in sorted(outcomes, key=lambda o: o[0])]
    (config.output_dir / report.RUN_LOG_NAME).write_text(
        "\n".join(log_lines + summary.format_lines()) + "\n", encoding="utf-8"
    )
    return summary
