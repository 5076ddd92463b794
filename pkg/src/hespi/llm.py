"""Zero-shot multimodal correction of extracted fields via a chat-completions endpoint."""

from __future__ import annotations

import base64
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import requests

from .core import LabelFieldClass
from .matcher import FieldTranscription

logger = logging.getLogger(__name__)

API_KEY_ENV = "HESPI_LLM_API_KEY"
ENDPOINT_ENV = "HESPI_LLM_ENDPOINT"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"

_FIELD_ORDER = {f: i for i, f in enumerate(LabelFieldClass)}


@dataclass(frozen=True)
class LlmConfig:
    model_name: str = "gpt-4o"
    endpoint: str = DEFAULT_ENDPOINT
    api_key: str | None = None
    enabled: bool = True
    timeout: float = 60.0
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, **overrides) -> "LlmConfig":
        env = {
            "api_key": os.environ.get(API_KEY_ENV),
            "endpoint": os.environ.get(ENDPOINT_ENV, DEFAULT_ENDPOINT),
        }
        env.update(overrides)
        return cls(**env)


@dataclass(frozen=True)
class CorrectionResponse:
    """Field overrides the model proposed; only fields it deemed incorrect appear."""

    overrides: dict[LabelFieldClass, str] = field(default_factory=dict)


def _image_part(image_path: Path) -> dict:
    data = base64.b64encode(Path(image_path).read_bytes()).decode("ascii")
    suffix = Path(image_path).suffix.lower().lstrip(".") or "jpeg"
    if suffix == "jpg":
        suffix = "jpeg"
    return {
        "type": "image_url",
        "image_url": {"url": f"data:image/{suffix};base64,{data}"},
    }


def build_prompt(
    config: LlmConfig, label_image_path: Path, fields: Sequence[FieldTranscription]
) -> dict:
    """Chat-completions payload asking for corrections to the accepted field texts.

    Lists, per field in declaration order: the accepted text, both raw
    engine outputs, and whether reference matching adjusted the text. The
    model is instructed to answer with a JSON object containing only the
    fields it corrects. No examples are included (zero-shot).
    """
    ordered = sorted(fields, key=lambda t: _FIELD_ORDER[t.field])
    lines = [
        "The attached image is a herbarium specimen label. Text was extracted",
        "from it per field with an OCR engine and an HTR engine, then checked",
        "against reference name lists. The fields of interest are: "
        + ", ".join(f.value for f in LabelFieldClass)
        + ".",
        "",
        "Current state of each extracted field:",
    ]
    for t in ordered:
        lines.append(f"- field: {t.field.value}")
        lines.append(f"  accepted text: {t.pre_llm_text!r}")
        lines.append(f"  OCR output: {t.ocr_text!r}")
        lines.append(f"  HTR output: {t.htr_text!r}")
        if t.changed_by_matching and t.selected_match is not None:
            lines.append(
                f"  note: adjusted to {t.selected_match.final_text!r} by reference-list matching"
            )
    lines += [
        "",
        "Compare the accepted texts with the label image. Reply with a JSON",
        "object whose keys are field names and whose values are the corrected",
        "text, including ONLY fields where the accepted text is incorrect.",
        "Reply with {} if everything is correct. Output JSON only.",
    ]
    return {
        "model": config.model_name,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": "\n".join(lines)},
                    _image_part(label_image_path),
                ],
            }
        ],
    }


def parse_correction(body: str) -> CorrectionResponse:
    """Parse the model's reply; anything unusable degrades to an empty correction."""
    text = body.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.startswith("json"):
            text = text[4:]
    try:
        document = json.loads(text)
    except json.JSONDecodeError:
        logger.warning("unparseable correction response: %.200r", body)
        return CorrectionResponse()
    if not isinstance(document, dict):
        logger.warning("correction response is not a JSON object: %.200r", body)
        return CorrectionResponse()
    overrides: dict[LabelFieldClass, str] = {}
    for key, value in document.items():
        try:
            field_class = LabelFieldClass(key)
        except ValueError:
            logger.warning("dropping unknown field %r from correction response", key)
            continue
        overrides[field_class] = str(value)
    return CorrectionResponse(overrides)


def apply_correction(
    fields: Sequence[FieldTranscription], response: CorrectionResponse
) -> list[FieldTranscription]:
    """Merge overrides: overridden fields take the model's text, the rest keep pre-LLM text.

    Match scores are not recomputed; they keep describing the reference
    step. Override keys not present in ``fields`` are ignored.
    """
    merged = []
    for t in fields:
        if t.field in response.overrides:
            merged.append(replace(t, final_text=response.overrides[t.field]))
        else:
            merged.append(replace(t, final_text=t.pre_llm_text))
    return merged


class LlmClient:
    """Issues correction requests with a retry and a bounded in-flight limit."""

    def __init__(
        self,
        config: LlmConfig,
        transport: Callable[[dict], str] | None = None,
    ):
        self.config = config
        self._transport = transport if transport is not None else self._post
        self._slots = threading.Semaphore(max(1, config.max_in_flight))

    def _post(self, payload: dict) -> str:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        response = requests.post(
            self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout
        )
        response.raise_for_status()
        document = response.json()
        return document["choices"][0]["message"]["content"]

    def request_correction(
        self, label_image_path: Path, fields: Sequence[FieldTranscription]
    ) -> CorrectionResponse:
        payload = build_prompt(self.config, label_image_path, fields)
        last_error: Exception | None = None
        for attempt in range(2):
            try:
                with self._slots:
                    body = self._transport(payload)
                return parse_correction(body)
            except (requests.RequestException, OSError, KeyError, ValueError) as exc:
                last_error = exc
        logger.warning(
            "correction request failed for %s, skipping: %s", label_image_path, last_error
        )
        return CorrectionResponse()

    def correct_fields(
        self, label_image_path: Path, fields: Sequence[FieldTranscription]
    ) -> list[FieldTranscription]:
        """Request and merge corrections; disabled or fieldless labels pass through."""
        if not self.config.enabled or not fields:
            return apply_correction(fields, CorrectionResponse())
        response = self.request_correction(label_image_path, fields)
        return apply_correction(fields, response)
