"""Persist crops, per-sheet text files, the aggregate CSV, and the HTML review report."""

from __future__ import annotations

import csv
import html
import logging
from pathlib import Path
from typing import Sequence

from PIL import Image

from .core import LabelFieldClass, LabelRecord, SheetRecord
from .matcher import FieldTranscription

logger = logging.getLogger(__name__)

CSV_NAME = "hespi.csv"
HTML_NAME = "report.html"
RUN_LOG_NAME = "run_log.txt"
CROP_JPEG_QUALITY = 95

FIELD_COLUMN_SUFFIXES = ("ocr", "htr", "adjusted", "score", "final")


def csv_header() -> list[str]:
    header = ["sheet_id", "label_index", "writing_type"]
    for field in LabelFieldClass:
        header.extend(f"{field.value}_{suffix}" for suffix in FIELD_COLUMN_SUFFIXES)
    return header


def format_score(score: float | None) -> str:
    """Shortest round-trip decimal; empty for absent scores."""
    return "" if score is None else repr(float(score))


def save_crop(image: Image.Image, path: Path) -> Path:
    """Write a crop as JPEG, converting modes JPEG cannot hold."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.mode not in ("RGB", "L"):
        image = image.convert("RGB")
    image.save(path, format="JPEG", quality=CROP_JPEG_QUALITY)
    return path


def _field_cells(label: LabelRecord) -> list[str]:
    by_field = {t.field: t for t in label.fields}
    cells: list[str] = []
    for field in LabelFieldClass:
        t = by_field.get(field)
        if t is None:
            cells.extend([""] * len(FIELD_COLUMN_SUFFIXES))
        else:
            cells.extend(
                [t.ocr_text, t.htr_text, t.pre_llm_text, format_score(t.score), t.final_text]
            )
    return cells


def write_csv(records: Sequence[SheetRecord], path: Path) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(csv_header())
        for record in records:
            for label in record.labels:
                writer.writerow(
                    [record.sheet_id, str(label.label_index), label.writing_type.value]
                    + _field_cells(label)
                )
    return path


def write_text_files(record: SheetRecord, out_dir: Path) -> list[Path]:
    """One file per engine plus the final text, for every field of every label."""
    sheet_dir = out_dir / record.sheet_id
    written = []
    for label in record.labels:
        suffix = "" if label.label_index == 0 else f"_{label.label_index}"
        for t in label.fields:
            for name, text in (
                (f"{t.field.value}{suffix}.ocr.txt", t.ocr_text),
                (f"{t.field.value}{suffix}.htr.txt", t.htr_text),
                (f"{t.field.value}{suffix}.txt", t.final_text),
            ):
                path = sheet_dir / name
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text, encoding="utf-8")
                written.append(path)
    return written


def _esc(text: str) -> str:
    return html.escape(text, quote=True)


def _rel(path: Path, out_dir: Path | None) -> str:
    if out_dir is None:
        return path.as_posix()
    try:
        return path.relative_to(out_dir).as_posix()
    except ValueError:
        return path.as_posix()


def _field_row(t: FieldTranscription, crop_src: str | None) -> str:
    img = f'<img src="{_esc(crop_src)}" alt="{_esc(t.field.value)} crop"/>' if crop_src else ""
    normalized = t.normalized_ocr if t.selected_engine.value == "ocr" else t.normalized_htr
    if t.changed_by_matching:
        adjusted = (
            f'<span class="orig">{_esc(normalized)}</span> '
            f'<span class="corrected">{_esc(t.pre_llm_text)}</span>'
        )
    else:
        adjusted = _esc(t.pre_llm_text)
    if t.changed_by_llm:
        final = (
            f'<span class="orig">{_esc(t.pre_llm_text)}</span> '
            f'<span class="llm">{_esc(t.final_text)}</span>'
        )
    else:
        final = _esc(t.final_text)
    return (
        "<tr>"
        f"<td>{_esc(t.field.value)}</td>"
        f"<td>{img}</td>"
        f"<td>{_esc(t.ocr_text)}</td>"
        f"<td>{_esc(t.htr_text)}</td>"
        f"<td>{adjusted}</td>"
        f"<td>{final}</td>"
        f"<td>{_esc(format_score(t.score))}</td>"
        "</tr>"
    )


_STYLE = """
body { font-family: sans-serif; margin: 1.5em; }
img { max-width: 420px; max-height: 140px; border: 1px solid #999; }
table { border-collapse: collapse; margin: 0.6em 0 1.6em; }
th, td { border: 1px solid #bbb; padding: 0.3em 0.6em; text-align: left; vertical-align: top; }
.orig { text-decoration: line-through; color: #a33; }
.corrected, .llm { background: #e4f7e4; font-weight: bold; }
.sheet { border-top: 2px solid #444; padding-top: 0.8em; }
"""


def render_html(records: Sequence[SheetRecord], out_dir: Path | None = None) -> str:
    """Static review page: every label crop, field crop, engine text, adjustment and score.

    Image references are relative to ``out_dir``; the document is otherwise
    self-contained.
    """
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8"/>',
        "<title>Specimen sheet extraction report</title>",
        f"<style>{_STYLE}</style>",
        "</head><body>",
        "<h1>Specimen sheet extraction report</h1>",
    ]
    if not records:
        parts.append("<p>Zero sheets processed.</p>")
    else:
        parts.append(f"<p>{len(records)} sheet(s) processed.</p>")
    for record in records:
        parts.append('<div class="sheet">')
        parts.append(f"<h2>{_esc(record.sheet_id)}</h2>")
        if not record.labels:
            parts.append("<p>No primary specimen label detected.</p>")
        for label in record.labels:
            parts.append(
                f"<h3>Label {label.label_index} "
                f"({_esc(label.writing_type.value)})</h3>"
            )
            parts.append(
                f'<img src="{_esc(_rel(label.crop_path, out_dir))}" '
                f'alt="label {label.label_index} crop"/>'
            )
            if label.fields:
                parts.append("<table><thead><tr>")
                for column in ("field", "crop", "ocr", "htr", "adjusted", "final", "score"):
                    parts.append(f"<th>{column}</th>")
                parts.append("</tr></thead><tbody>")
                for t in label.fields:
                    crop_path = label.field_crop_paths.get(t.field)
                    src = _rel(crop_path, out_dir) if crop_path else None
                    parts.append(_field_row(t, src))
                parts.append("</tbody></table>")
            else:
                parts.append("<p>No fields extracted.</p>")
        parts.append("</div>")
    parts.append("</body></html>")
    return "\n".join(parts)


def write_outputs(records: Sequence[SheetRecord], out_dir: Path) -> list[Path]:
    """Write the aggregate CSV, per-sheet text files and the HTML report.

    Crop images are written while sheets are processed (external engines
    read them from disk); they are included in the returned manifest.
    Records are emitted in the order given; callers sort.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: list[Path] = []
    manifest.append(write_csv(records, out_dir / CSV_NAME))
    for record in records:
        manifest.extend(write_text_files(record, out_dir))
    html_path = out_dir / HTML_NAME
    html_path.write_text(render_html(records, out_dir), encoding="utf-8")
    manifest.append(html_path)
    for record in records:
        manifest.extend(record.crop_paths.values())
    return manifest
