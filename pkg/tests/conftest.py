import json
from pathlib import Path

import pytest
from PIL import Image

from hespi.core import LabelFieldClass as F
from hespi.core import SheetComponentClass as C
from hespi.engines import FileClassifier, FileDetector, FileTextEngine
from hespi.llm import LlmConfig
from hespi.matcher import EngineKind, MatcherConfig
from hespi.pipeline import PipelineConfig
from hespi.reference import default_reference_dir, load_reference_dir


@pytest.fixture(scope="session")
def sample_indices():
    return load_reference_dir(default_reference_dir())


def _write_detections(path: Path, entries):
    detections = [
        {"class": cls, "x1": x1, "y1": y1, "x2": x2, "y2": y2, "confidence": conf}
        for cls, (x1, y1, x2, y2), conf in entries
    ]
    path.write_text(json.dumps({"detections": detections}), encoding="utf-8")


def build_synthetic_batch(root: Path) -> tuple[list[Path], Path]:
    """Three deterministic sheets with precomputed detections and engine texts.

    s1: one typewritten label; OCR clearly wins arbitration; genus needs a
        reference correction, family needs formatting, one duplicate and one
        low-confidence field detection exercise the filters.
    s2: one handwritten label with equal engine scores (tie goes to HTR).
    s3: no primary label at all, only other components.
    """
    images = root / "images"
    aux = root / "aux"
    images.mkdir(parents=True, exist_ok=True)
    aux.mkdir(parents=True, exist_ok=True)

    for name, color in (("s1", (250, 245, 230)), ("s2", (240, 250, 235)), ("s3", (235, 240, 250))):
        sheet = Image.new("RGB", (400, 300), color)
        sheet.save(images / f"{name}.png")

    _write_detections(
        aux / "s1.detections.json",
        [
            (C.PRIMARY_SPECIMEN_LABEL.value, (40, 40, 360, 260), 0.9),
            (C.SWATCH.value, (0, 0, 30, 30), 0.8),
        ],
    )
    _write_detections(
        aux / "s1_primary_specimen_label_0.detections.json",
        [
            (F.FAMILY.value, (10, 10, 150, 40), 0.95),
            (F.GENUS.value, (10, 50, 150, 80), 0.9),
            (F.SPECIES.value, (160, 50, 300, 80), 0.9),
            (F.SPECIES.value, (160, 130, 300, 160), 0.5),  # duplicate, lower confidence
            (F.AUTHORITY.value, (10, 90, 150, 120), 0.85),
            (F.YEAR.value, (160, 90, 300, 120), 0.8),
            (F.COLLECTOR.value, (10, 130, 150, 160), 0.1),  # below min_confidence
        ],
    )
    (aux / "s1_primary_specimen_label_0.writing.txt").write_text("typewritten")
    for stem, text in (
        ("s1_family_0", " FABACEAE. "),
        ("s1_genus_0", "Ahnfletia"),
        ("s1_species_0", "Torulosa,"),
        ("s1_authority_0", "Benth."),
        ("s1_year_0", "1923"),
    ):
        (aux / f"{stem}.ocr.txt").write_text(text)
    # no HTR files for s1: the engine finds no text, so OCR wins the arbitration

    _write_detections(
        aux / "s2.detections.json",
        [
            (C.PRIMARY_SPECIMEN_LABEL.value, (50, 50, 350, 250), 0.85),
            (C.STAMP.value, (5, 5, 35, 35), 0.7),
        ],
    )
    _write_detections(
        aux / "s2_primary_specimen_label_0.detections.json",
        [
            (F.GENUS.value, (10, 10, 150, 40), 0.9),
            (F.SPECIES.value, (10, 50, 150, 80), 0.88),
            (F.COLLECTOR.value, (160, 10, 300, 40), 0.8),
        ],
    )
    (aux / "s2_primary_specimen_label_0.writing.txt").write_text("handwritten")
    for stem, ocr_text, htr_text in (
        ("s2_genus_0", "Banksia", "Banksia"),
        ("s2_species_0", "serrata", "serrata"),
        ("s2_collector_0", "J. Smith", "J Smith"),
    ):
        (aux / f"{stem}.ocr.txt").write_text(ocr_text)
        (aux / f"{stem}.htr.txt").write_text(htr_text)

    _write_detections(
        aux / "s3.detections.json",
        [
            (C.STAMP.value, (10, 10, 60, 60), 0.9),
            (C.SCALE.value, (300, 250, 390, 290), 0.95),
        ],
    )

    return sorted(images.glob("*.png")), aux


def make_file_config(out_dir: Path, aux_dir: Path, indices, **overrides) -> PipelineConfig:
    defaults = dict(
        output_dir=out_dir,
        component_detector=FileDetector(C, aux_dir),
        field_detector=FileDetector(F, aux_dir),
        classifier=FileClassifier(aux_dir),
        ocr_engine=FileTextEngine(EngineKind.OCR, aux_dir),
        htr_engine=FileTextEngine(EngineKind.HTR, aux_dir),
        indices=indices,
        matcher=MatcherConfig(),
        llm=LlmConfig(enabled=False),
        workers=1,
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


@pytest.fixture
def synthetic_batch(tmp_path, sample_indices):
    image_paths, aux_dir = build_synthetic_batch(tmp_path)

    def configure(**overrides) -> PipelineConfig:
        out_dir = overrides.pop("output_dir", tmp_path / "out")
        return make_file_config(out_dir, aux_dir, sample_indices, **overrides)

    return image_paths, aux_dir, configure
