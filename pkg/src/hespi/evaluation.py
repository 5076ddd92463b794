"""Compare pipeline CSV output against ground truth and compute aggregate metrics."""

from __future__ import annotations

import argparse
import csv
import statistics
import string
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import LabelFieldClass, WritingType
from .matcher import gestalt_similarity

_DROP_TABLE = {ord(c): None for c in string.punctuation}


class EvaluationError(RuntimeError):
    pass


def preprocess_text(text: str, collapse_ws: bool = True) -> str:
    """Drop non-ASCII characters and punctuation, lowercase, tidy whitespace."""
    text = text.encode("ascii", errors="ignore").decode("ascii")
    text = text.translate(_DROP_TABLE).lower()
    if collapse_ws:
        text = " ".join(text.split())
    else:
        text = text.strip()
    return text


def eval_similarity(predicted: str, truth: str, collapse_ws: bool = True) -> float:
    """Gestalt similarity of the preprocessed texts, symmetric in its arguments.

    A field present on exactly one side scores 0. The greedy matching is
    direction-dependent on rare tie layouts, so both directions are scored
    and the larger kept.
    """
    if (predicted.strip() == "") != (truth.strip() == ""):
        return 0.0
    a = preprocess_text(predicted, collapse_ws)
    b = preprocess_text(truth, collapse_ws)
    return max(gestalt_similarity(a, b), gestalt_similarity(b, a))


@dataclass(frozen=True)
class GroundTruthSheet:
    writing_type: WritingType
    fields: Mapping[LabelFieldClass, str]


@dataclass(frozen=True)
class GroundTruth:
    """Expected writing type and field texts, keyed by sheet id.

    ``fields`` lists the field columns the truth file declares; evaluation
    runs over exactly those columns.
    """

    sheets: Mapping[str, GroundTruthSheet]
    fields: tuple[LabelFieldClass, ...]


def load_ground_truth(path: Path) -> GroundTruth:
    """Read a truth CSV: ``sheet_id,writing_type,<field>...``; empty cell = absent."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        if "sheet_id" not in header or "writing_type" not in header:
            raise EvaluationError(f"{path}: truth file needs sheet_id and writing_type columns")
        field_columns = []
        for column in header:
            if column in ("sheet_id", "writing_type"):
                continue
            try:
                field_columns.append(LabelFieldClass(column))
            except ValueError:
                raise EvaluationError(f"{path}: unknown field column {column!r}") from None
        sheets: dict[str, GroundTruthSheet] = {}
        for row in reader:
            sheet_id = (row["sheet_id"] or "").strip()
            if not sheet_id:
                continue
            writing = WritingType(row["writing_type"].strip())
            fields = {
                f: (row.get(f.value) or "").strip()
                for f in field_columns
                if (row.get(f.value) or "").strip()
            }
            sheets[sheet_id] = GroundTruthSheet(writing, fields)
    return GroundTruth(sheets, tuple(field_columns))


@dataclass(frozen=True)
class PredictedSheet:
    writing_type: WritingType
    fields: Mapping[LabelFieldClass, str]


def load_predictions(path: Path) -> dict[str, PredictedSheet]:
    """Read the pipeline CSV, keeping the first (highest-confidence) label per sheet."""
    path = Path(path)
    sheets: dict[str, PredictedSheet] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            sheet_id = row["sheet_id"]
            if sheet_id in sheets and int(row["label_index"]) > 0:
                continue
            fields = {}
            for f in LabelFieldClass:
                text = (row.get(f"{f.value}_final") or "").strip()
                if text:
                    fields[f] = text
            sheets[sheet_id] = PredictedSheet(WritingType(row["writing_type"]), fields)
    return sheets


@dataclass(frozen=True)
class FieldSimilarity:
    sheet_id: str
    field: LabelFieldClass
    predicted: str
    truth: str
    similarity: float


@dataclass(frozen=True)
class EvalResult:
    label_classification_accuracy: float
    field_present_accuracy: float
    similarities: tuple[FieldSimilarity, ...]
    median_similarity: float
    mean_similarity: float

    def format_table(self) -> str:
        rows = [
            ("label classification accuracy", self.label_classification_accuracy),
            ("field present accuracy", self.field_present_accuracy),
            ("median text similarity", self.median_similarity),
            ("mean text similarity", self.mean_similarity),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name.ljust(width)}  {value:.4f}" for name, value in rows)


def evaluate(
    predictions: Mapping[str, PredictedSheet],
    truth: GroundTruth,
    collapse_ws: bool = True,
) -> EvalResult:
    """Score predictions against the truth set over the truth file's field columns."""
    for sheet_id in predictions:
        if sheet_id not in truth.sheets:
            raise EvaluationError(f"predicted sheet {sheet_id!r} missing from ground truth")

    classified_ok = 0
    present_ok = 0
    cells = 0
    similarities: list[FieldSimilarity] = []
    for sheet_id, expected in truth.sheets.items():
        predicted = predictions.get(sheet_id)
        predicted_writing = predicted.writing_type if predicted else None
        if predicted_writing == expected.writing_type:
            classified_ok += 1
        for field in truth.fields:
            truth_text = expected.fields.get(field, "")
            predicted_text = predicted.fields.get(field, "") if predicted else ""
            cells += 1
            if bool(truth_text) == bool(predicted_text):
                present_ok += 1
            if truth_text or predicted_text:
                similarities.append(
                    FieldSimilarity(
                        sheet_id,
                        field,
                        predicted_text,
                        truth_text,
                        eval_similarity(predicted_text, truth_text, collapse_ws),
                    )
                )

    sheet_count = len(truth.sheets)
    values = [s.similarity for s in similarities]
    return EvalResult(
        label_classification_accuracy=classified_ok / sheet_count if sheet_count else 1.0,
        field_present_accuracy=present_ok / cells if cells else 1.0,
        similarities=tuple(similarities),
        median_similarity=statistics.median(values) if values else 1.0,
        mean_similarity=statistics.fmean(values) if values else 1.0,
    )


def write_result_csvs(
    result: EvalResult, report_path: Path, similarities_path: Path
) -> None:
    with open(report_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "label_classification_accuracy",
                "field_present_accuracy",
                "median_similarity",
                "mean_similarity",
            ]
        )
        writer.writerow(
            [
                repr(result.label_classification_accuracy),
                repr(result.field_present_accuracy),
                repr(result.median_similarity),
                repr(result.mean_similarity),
            ]
        )
    with open(similarities_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sheet_id", "field", "predicted", "truth", "similarity"])
        for s in result.similarities:
            writer.writerow([s.sheet_id, s.field.value, s.predicted, s.truth, repr(s.similarity)])


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hespi-eval",
        description="Score a pipeline CSV against a ground-truth CSV.",
    )
    parser.add_argument("--predictions", required=True, type=Path, help="hespi.csv from a run")
    parser.add_argument("--truth", required=True, type=Path, help="ground-truth CSV")
    parser.add_argument(
        "--no-ws-collapse",
        action="store_true",
        help="do not collapse whitespace runs during text preprocessing",
    )
    parser.add_argument("--report-csv", type=Path, default=None, help="aggregate metrics CSV path")
    parser.add_argument(
        "--similarities-csv", type=Path, default=None, help="per-field similarity CSV path"
    )
    args = parser.parse_args(argv)

    try:
        predictions = load_predictions(args.predictions)
        truth = load_ground_truth(args.truth)
        result = evaluate(predictions, truth, collapse_ws=not args.no_ws_collapse)
    except (OSError, EvaluationError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(result.format_table())
    out_dir = args.predictions.parent
    report_path = args.report_csv or out_dir / "evaluation.csv"
    similarities_path = args.similarities_csv or out_dir / "field_similarities.csv"
    write_result_csvs(result, report_path, similarities_path)
    print(f"wrote {report_path} and {similarities_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
