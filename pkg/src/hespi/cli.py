"""Command-line entry point for the extraction pipeline."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import engines
from .core import LabelFieldClass, SheetComponentClass, WritingType
from .llm import LlmConfig
from .matcher import EngineKind, MatcherConfig
from .pipeline import PipelineConfig, collect_images, process_batch
from .reference import ReferenceLoadError, default_reference_dir, load_reference_dir

logger = logging.getLogger(__name__)


class ConfigurationError(RuntimeError):
    pass


def _split_spec(spec: str) -> tuple[str, str | None]:
    mode, _, argument = spec.partition(":")
    return mode, argument or None


def _build_detector(spec: str, classes: type, slots: engines._SubprocessSlots):
    mode, argument = _split_spec(spec)
    if mode == "stub":
        return engines.StubDetector()
    if mode == "file":
        return engines.FileDetector(classes, Path(argument) if argument else None)
    if mode == "cmd":
        if not argument:
            raise ConfigurationError("--detector cmd: needs a command")
        return engines.CommandDetector(classes, engines.parse_command(argument), slots=slots)
    raise ConfigurationError(f"unknown detector mode {mode!r} (use cmd:, file: or stub)")


def _build_classifier(spec: str, slots: engines._SubprocessSlots):
    mode, argument = _split_spec(spec)
    if mode == "stub":
        return engines.StubClassifier()
    if mode == "fixed":
        if not argument:
            raise ConfigurationError("--classifier fixed: needs a writing type")
        try:
            return engines.StubClassifier(WritingType(argument))
        except ValueError:
            raise ConfigurationError(f"unknown writing type {argument!r}") from None
    if mode == "file":
        return engines.FileClassifier(Path(argument) if argument else None)
    if mode == "cmd":
        if not argument:
            raise ConfigurationError("--classifier cmd: needs a command")
        return engines.CommandClassifier(engines.parse_command(argument), slots=slots)
    raise ConfigurationError(f"unknown classifier mode {mode!r}")


def _build_text_engine(spec: str, kind: EngineKind, slots: engines._SubprocessSlots):
    mode, argument = _split_spec(spec)
    if mode == "stub":
        return engines.StubTextEngine(kind)
    if mode == "none":
        return engines.EmptyTextEngine(kind)
    if mode == "file":
        return engines.FileTextEngine(kind, Path(argument) if argument else None)
    if mode == "tesseract":
        return engines.CommandTextEngine(kind, engines.default_ocr_argv(), slots=slots)
    if mode == "cmd":
        if not argument:
            raise ConfigurationError(f"--{kind.value} cmd: needs a command")
        return engines.CommandTextEngine(kind, engines.parse_command(argument), slots=slots)
    if mode == "url":
        if not argument:
            raise ConfigurationError(f"--{kind.value} url: needs an endpoint")
        return engines.HttpTextEngine(kind, argument)
    raise ConfigurationError(f"unknown {kind.value} engine mode {mode!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hespi",
        description=(
            "Extract pre-catalogue data from herbarium specimen sheet images: "
            "detect components and label fields, run OCR/HTR, correct taxon "
            "names against reference lists, and write CSV/text/HTML outputs."
        ),
    )
    parser.add_argument("paths", nargs="+", type=Path, help="sheet images or directories")
    parser.add_argument("--output-dir", required=True, type=Path)
    parser.add_argument(
        "--fuzzy-cutoff",
        type=float,
        default=0.8,
        help="minimum similarity for a reference correction (default 0.8)",
    )
    parser.add_argument(
        "--no-fuzzy", action="store_true", help="disable reference matching entirely"
    )
    parser.add_argument("--llm", metavar="MODEL", default=None, help="LLM model name for correction")
    parser.add_argument("--no-llm", action="store_true", help="disable LLM correction")
    parser.add_argument(
        "--reference-dir",
        type=Path,
        default=None,
        help="directory with {family,genus,species,authority}.txt (default: bundled samples)",
    )
    parser.add_argument(
        "--detector",
        default="file",
        help="cmd:<CMD> | file[:<DIR>] | stub  (default: file, resolved beside each image)",
    )
    parser.add_argument(
        "--classifier",
        default="file",
        help="cmd:<CMD> | file[:<DIR>] | fixed:<writing_type> | stub  (default: file)",
    )
    parser.add_argument(
        "--ocr",
        default="tesseract",
        help="tesseract | cmd:<CMD> | file[:<DIR>] | stub | none  (default: tesseract)",
    )
    parser.add_argument(
        "--htr",
        default="none",
        help="url:<URL> | cmd:<CMD> | file[:<DIR>] | stub | none  (default: none)",
    )
    parser.add_argument("--min-confidence", type=float, default=0.25)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument(
        "--engine",
        choices=[k.value for k in EngineKind],
        default=None,
        help="force a single text engine instead of arbitrating",
    )
    parser.add_argument(
        "--recursive", action="store_true", help="scan input directories recursively"
    )
    parser.add_argument("--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> tuple[PipelineConfig, list[Path]]:
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    if not 0.0 <= args.fuzzy_cutoff <= 1.0:
        raise ConfigurationError("--fuzzy-cutoff must be in [0, 1]")

    images = collect_images(args.paths, recursive=args.recursive)
    missing = [p for p in images if not p.is_file()]
    if missing:
        raise ConfigurationError(f"input not found: {missing[0]}")
    if not images:
        raise ConfigurationError("no input images found")

    ref_dir = args.reference_dir if args.reference_dir else default_reference_dir()
    try:
        indices = load_reference_dir(ref_dir)
    except ReferenceLoadError as exc:
        raise ConfigurationError(str(exc)) from None

    slots = engines._SubprocessSlots(args.workers)
    llm = LlmConfig.from_env(
        enabled=not args.no_llm,
        **({"model_name": args.llm} if args.llm else {}),
    )
    config = PipelineConfig(
        output_dir=args.output_dir,
        component_detector=_build_detector(args.detector, SheetComponentClass, slots),
        field_detector=_build_detector(args.detector, LabelFieldClass, slots),
        classifier=_build_classifier(args.classifier, slots),
        ocr_engine=_build_text_engine(args.ocr, EngineKind.OCR, slots),
        htr_engine=_build_text_engine(args.htr, EngineKind.HTR, slots),
        indices=indices,
        matcher=MatcherConfig(cutoff=args.fuzzy_cutoff, matching_enabled=not args.no_fuzzy),
        llm=llm,
        workers=args.workers,
        min_confidence=args.min_confidence,
        engine_override=EngineKind(args.engine) if args.engine else None,
    )
    return config, images


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config, images = config_from_args(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    summary = process_batch(config, images)
    for line in summary.format_lines():
        print(line)
    print(f"outputs in {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
