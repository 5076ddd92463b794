"""Adapters for the external recognizers: detectors, the writing classifier, OCR/HTR.

Every adapter family has an external-process or precomputed-file
implementation plus a deterministic stub for tests. Adapter modes:
``external_process``, ``precomputed_file``, ``stub``.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import threading
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import requests

from .core import (
    BoundingBox,
    Detection,
    DetectionClass,
    LabelFieldClass,
    SheetComponentClass,
    WritingType,
)
from .matcher import EngineKind

logger = logging.getLogger(__name__)

DEFAULT_ENGINE_TIMEOUT = 30.0


class AdapterError(RuntimeError):
    """An external adapter failed or produced output violating its contract."""


def _class_by_value(classes: type, value: str) -> DetectionClass:
    try:
        return classes(value)
    except ValueError:
        raise AdapterError(
            f"invalid detection class {value!r}; expected one of "
            f"{[c.value for c in classes]}"
        ) from None


def parse_detections(document: object, classes: type) -> list[Detection]:
    """Validate a detection JSON document against the closed class set."""
    if not isinstance(document, dict) or not isinstance(document.get("detections"), list):
        raise AdapterError("detection document must be an object with a 'detections' list")
    detections = []
    for entry in document["detections"]:
        if not isinstance(entry, dict):
            raise AdapterError(f"detection entry is not an object: {entry!r}")
        try:
            class_name = _class_by_value(classes, entry["class"])
            box = BoundingBox(
                int(entry["x1"]), int(entry["y1"]), int(entry["x2"]), int(entry["y2"])
            )
            detection = Detection(class_name, box, float(entry["confidence"]))
        except AdapterError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise AdapterError(f"malformed detection entry {entry!r}: {exc}") from exc
        detections.append(detection)
    return detections


class DetectorAdapter(Protocol):
    mode: str

    def detect(self, image_path: Path) -> list[Detection]: ...


class StubDetector:
    """Returns canned detections keyed by image stem (or a fixed list)."""

    mode = "stub"

    def __init__(
        self,
        detections: Mapping[str, Sequence[Detection]] | Sequence[Detection] = (),
    ):
        self._by_stem = detections if isinstance(detections, Mapping) else None
        self._fixed = None if isinstance(detections, Mapping) else list(detections)

    def detect(self, image_path: Path) -> list[Detection]:
        if self._by_stem is not None:
            return list(self._by_stem.get(Path(image_path).stem, ()))
        return list(self._fixed or ())


class FileDetector:
    """Reads ``<image stem>.detections.json`` beside the image or under a directory."""

    mode = "precomputed_file"

    def __init__(self, classes: type, directory: Path | None = None):
        self.classes = classes
        self.directory = Path(directory) if directory else None

    def detect(self, image_path: Path) -> list[Detection]:
        image_path = Path(image_path)
        base = self.directory if self.directory is not None else image_path.parent
        path = base / f"{image_path.stem}.detections.json"
        if not path.is_file():
            raise AdapterError(f"no precomputed detections at {path}")
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise AdapterError(f"cannot parse {path}: {exc}") from exc
        return parse_detections(document, self.classes)


def _format_command(argv: Sequence[str], image_path: Path) -> list[str]:
    """Substitute ``{image}`` in the argv template, or append the path."""
    if any("{image}" in part for part in argv):
        return [part.replace("{image}", str(image_path)) for part in argv]
    return [*argv, str(image_path)]


class _SubprocessSlots:
    """Bounded pool of subprocess slots shared by external-process adapters."""

    def __init__(self, limit: int = 1):
        self._semaphore = threading.Semaphore(max(1, limit))

    def run(self, argv: list[str], timeout: float | None) -> subprocess.CompletedProcess:
        with self._semaphore:
            return subprocess.run(argv, capture_output=True, text=True, timeout=timeout)


class CommandDetector:
    """Invokes a command with the image path; reads detection JSON from stdout."""

    mode = "external_process"

    def __init__(
        self,
        classes: type,
        argv: Sequence[str],
        timeout: float | None = None,
        slots: _SubprocessSlots | None = None,
    ):
        self.classes = classes
        self.argv = list(argv)
        self.timeout = timeout
        self.slots = slots or _SubprocessSlots()

    def detect(self, image_path: Path) -> list[Detection]:
        argv = _format_command(self.argv, Path(image_path))
        try:
            proc = self.slots.run(argv, self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"detector command {argv} failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(
                f"detector command {argv} exited {proc.returncode}: {proc.stderr.strip()}"
            )
        try:
            document = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"detector command {argv} emitted unparseable output: {exc}") from exc
        return parse_detections(document, self.classes)


class ClassifierAdapter(Protocol):
    mode: str

    def classify(self, image_path: Path) -> WritingType: ...


def _parse_writing_type(value: str) -> WritingType:
    try:
        return WritingType(value.strip())
    except ValueError:
        raise AdapterError(
            f"unknown writing type {value.strip()!r}; expected one of "
            f"{[w.value for w in WritingType]}"
        ) from None


class StubClassifier:
    mode = "stub"

    def __init__(self, writing: WritingType | Mapping[str, WritingType] = WritingType.TYPEWRITTEN):
        self._mapping = writing if isinstance(writing, Mapping) else None
        self._fixed = None if isinstance(writing, Mapping) else writing

    def classify(self, image_path: Path) -> WritingType:
        if self._mapping is not None:
            stem = Path(image_path).stem
            if stem not in self._mapping:
                raise AdapterError(f"stub classifier has no entry for {stem!r}")
            return self._mapping[stem]
        assert self._fixed is not None
        return self._fixed


class FileClassifier:
    """Reads ``<image stem>.writing.txt`` beside the image or under a directory."""

    mode = "precomputed_file"

    def __init__(self, directory: Path | None = None):
        self.directory = Path(directory) if directory else None

    def classify(self, image_path: Path) -> WritingType:
        image_path = Path(image_path)
        base = self.directory if self.directory is not None else image_path.parent
        path = base / f"{image_path.stem}.writing.txt"
        if not path.is_file():
            raise AdapterError(f"no precomputed writing type at {path}")
        return _parse_writing_type(path.read_text(encoding="utf-8"))


class CommandClassifier:
    mode = "external_process"

    def __init__(
        self,
        argv: Sequence[str],
        timeout: float | None = None,
        slots: _SubprocessSlots | None = None,
    ):
        self.argv = list(argv)
        self.timeout = timeout
        self.slots = slots or _SubprocessSlots()

    def classify(self, image_path: Path) -> WritingType:
        argv = _format_command(self.argv, Path(image_path))
        try:
            proc = self.slots.run(argv, self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"classifier command {argv} failed: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(
                f"classifier command {argv} exited {proc.returncode}: {proc.stderr.strip()}"
            )
        return _parse_writing_type(proc.stdout)


class TextEngineAdapter(Protocol):
    mode: str
    kind: EngineKind

    def recognize(self, image_path: Path) -> str: ...


class StubTextEngine:
    """Returns canned text keyed by field-crop stem; unknown stems yield empty text."""

    mode = "stub"

    def __init__(self, kind: EngineKind, texts: Mapping[str, str] | None = None):
        self.kind = kind
        self.texts = dict(texts or {})

    def recognize(self, image_path: Path) -> str:
        return self.texts.get(Path(image_path).stem, "")


class FileTextEngine:
    """Reads ``<image stem>.<kind>.txt``; a missing file means no text was found."""

    mode = "precomputed_file"

    def __init__(self, kind: EngineKind, directory: Path | None = None):
        self.kind = kind
        self.directory = Path(directory) if directory else None

    def recognize(self, image_path: Path) -> str:
        image_path = Path(image_path)
        base = self.directory if self.directory is not None else image_path.parent
        path = base / f"{image_path.stem}.{self.kind.value}.txt"
        if not path.is_file():
            logger.debug("no %s text at %s", self.kind.value, path)
            return ""
        return path.read_text(encoding="utf-8")


class CommandTextEngine:
    """Runs a command per field image and takes stdout as the recognized text.

    Engine failures (crash, timeout, unparseable invocation) degrade to
    empty text with a warning so one bad field never aborts a batch.
    """

    mode = "external_process"

    def __init__(
        self,
        kind: EngineKind,
        argv: Sequence[str],
        timeout: float = DEFAULT_ENGINE_TIMEOUT,
        slots: _SubprocessSlots | None = None,
    ):
        self.kind = kind
        self.argv = list(argv)
        self.timeout = timeout
        self.slots = slots or _SubprocessSlots()

    def recognize(self, image_path: Path) -> str:
        argv = _format_command(self.argv, Path(image_path))
        try:
            proc = self.slots.run(argv, self.timeout)
        except subprocess.TimeoutExpired:
            logger.warning("%s engine timed out after %.0fs on %s", self.kind.value, self.timeout, image_path)
            return ""
        except OSError as exc:
            logger.warning("%s engine command failed on %s: %s", self.kind.value, image_path, exc)
            return ""
        if proc.returncode != 0:
            logger.warning(
                "%s engine exited %d on %s: %s",
                self.kind.value,
                proc.returncode,
                image_path,
                proc.stderr.strip(),
            )
            return ""
        return proc.stdout


class HttpTextEngine:
    """Posts the image bytes to an HTTP endpoint that answers with plain text."""

    mode = "external_process"

    def __init__(self, kind: EngineKind, url: str, timeout: float = DEFAULT_ENGINE_TIMEOUT):
        self.kind = kind
        self.url = url
        self.timeout = timeout

    def recognize(self, image_path: Path) -> str:
        try:
            data = Path(image_path).read_bytes()
            response = requests.post(
                self.url,
                data=data,
                headers={"Content-Type": "application/octet-stream"},
                timeout=self.timeout,
            )
            response.raise_for_status()
            return response.text
        except (OSError, requests.RequestException) as exc:
            logger.warning("%s engine request failed on %s: %s", self.kind.value, image_path, exc)
            return ""


class EmptyTextEngine:
    """Placeholder for an unconfigured engine; always finds no text."""

    mode = "stub"

    def __init__(self, kind: EngineKind):
        self.kind = kind

    def recognize(self, image_path: Path) -> str:
        return ""


def default_ocr_argv() -> list[str]:
    """Tesseract in single-text-line page segmentation mode, text on stdout."""
    return ["tesseract", "{image}", "stdout", "--psm", "7"]


def _validated(detections: Iterable[Detection], classes: type) -> list[Detection]:
    result = []
    for det in detections:
        if not isinstance(det.class_name, classes):
            raise AdapterError(f"adapter returned out-of-taxonomy class {det.class_name!r}")
        result.append(det)
    return result


def detect_components(adapter: DetectorAdapter, image_path: Path) -> list[Detection]:
    """Sheet-component detections, validated against the component class set."""
    return _validated(adapter.detect(Path(image_path)), SheetComponentClass)


def detect_fields(adapter: DetectorAdapter, label_image_path: Path) -> list[Detection]:
    """Label-field detections, validated against the field class set.

    Duplicate detections of one field class are returned as-is; the caller
    deduplicates.
    """
    return _validated(adapter.detect(Path(label_image_path)), LabelFieldClass)


def classify_label(adapter: ClassifierAdapter, label_image_path: Path) -> WritingType:
    return adapter.classify(Path(label_image_path))


def recognize(adapter: TextEngineAdapter, field_image_path: Path) -> str:
    """Raw engine text with the trailing newline trimmed; empty when nothing was found."""
    return adapter.recognize(Path(field_image_path)).rstrip("\r\n")


def parse_command(spec: str) -> list[str]:
    """Split a command string the way a shell would."""
    argv = shlex.split(spec)
    if not argv:
        raise ValueError("empty command")
    return argv
