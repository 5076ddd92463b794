"""Field-text normalization, Gestalt similarity, reference correction, engine arbitration."""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Sequence

from .core import MATCHABLE_FIELDS, HTR_PREFERRED, LabelFieldClass, WritingType

if TYPE_CHECKING:
    from .reference import NameIndex

_STRIP_CHARS = string.whitespace + string.punctuation


class EngineKind(str, Enum):
    OCR = "ocr"
    HTR = "htr"


def normalize_field(field: LabelFieldClass, raw: str) -> str:
    """Apply the per-field formatting rules to raw engine text.

    Family and genus are stripped of boundary whitespace/punctuation and set
    to first-letter-upper, rest-lower; species likewise stripped but all
    lower case; the infraspecific taxon is trimmed and lowercased; every
    other field is only trimmed of whitespace.
    """
    if field in (LabelFieldClass.FAMILY, LabelFieldClass.GENUS):
        return raw.strip(_STRIP_CHARS).capitalize()
    if field == LabelFieldClass.SPECIES:
        return raw.strip(_STRIP_CHARS).lower()
    if field == LabelFieldClass.INFRASPECIFIC_TAXON:
        return raw.strip().lower()
    return raw.strip()


def _longest_match(
    a: str, b2j: dict[str, list[int]], alo: int, ahi: int, blo: int, bhi: int
) -> tuple[int, int, int]:
    """Longest block a[i:i+k] == b[j:j+k] within the windows.

    Ties are broken by the smallest start in a, then the smallest start in b.
    """
    best_i, best_j, best_k = alo, blo, 0
    j2len: dict[int, int] = {}
    for i in range(alo, ahi):
        newj2len: dict[int, int] = {}
        for j in b2j.get(a[i], ()):
            if j < blo:
                continue
            if j >= bhi:
                break
            k = newj2len[j] = j2len.get(j - 1, 0) + 1
            if k > best_k:
                best_i, best_j, best_k = i - k + 1, j - k + 1, k
        j2len = newj2len
    return best_i, best_j, best_k


def gestalt_match_length(a: str, b: str) -> int:
    """Total characters matched by recursive longest-common-substring decomposition."""
    b2j: dict[str, list[int]] = {}
    for j, ch in enumerate(b):
        b2j.setdefault(ch, []).append(j)
    total = 0
    queue = [(0, len(a), 0, len(b))]
    while queue:
        alo, ahi, blo, bhi = queue.pop()
        if alo >= ahi or blo >= bhi:
            continue
        i, j, k = _longest_match(a, b2j, alo, ahi, blo, bhi)
        if k:
            total += k
            queue.append((alo, i, blo, j))
            queue.append((i + k, ahi, j + k, bhi))
    return total


def gestalt_similarity(a: str, b: str) -> float:
    """Gestalt (Ratcliff/Obershelp) similarity: 2*matches / (len(a) + len(b)).

    1.0 for equal strings (including both empty), 0.0 when no character
    matches.
    """
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return 2.0 * gestalt_match_length(a, b) / total


def similarity_upper_bound(len_a: int, len_b: int) -> float:
    """2*min/(sum): no pair of these lengths can score higher."""
    total = len_a + len_b
    if total == 0:
        return 1.0
    return 2.0 * min(len_a, len_b) / total


@dataclass(frozen=True)
class MatcherConfig:
    cutoff: float = 0.8
    matching_enabled: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.cutoff <= 1.0:
            raise ValueError(f"cutoff {self.cutoff} outside [0, 1]")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of checking one field text against a reference index.

    score semantics: 1.0 = exact reference hit (unchanged), [cutoff, 1) =
    corrected to the closest reference name, 0.0 = nothing within the
    cutoff (text passed through). score is None when matching was disabled.
    """

    final_text: str
    score: float | None
    changed: bool
    candidate: str | None


def best_match(
    index: "NameIndex", text: str, config: MatcherConfig, prune: bool = True
) -> MatchResult:
    """Correct ``text`` against the index per the cutoff rule.

    Exact (case-insensitive) hits return the canonical spelling at score 1.
    Otherwise the index is scanned for the candidate with the highest
    Gestalt similarity; a candidate at or above the cutoff replaces the
    text (ties broken lexicographically ascending). Below the cutoff the
    text passes through at score 0.
    """
    if not config.matching_enabled:
        return MatchResult(final_text=text, score=None, changed=False, candidate=None)
    if not text:
        return MatchResult(final_text=text, score=0.0, changed=False, candidate=None)

    canonical = index.exact(text)
    if canonical is not None:
        return MatchResult(final_text=canonical, score=1.0, changed=False, candidate=canonical)

    found = index.scan(text, config.cutoff, prune=prune)
    if found is None:
        return MatchResult(final_text=text, score=0.0, changed=False, candidate=None)
    candidate, score = found
    return MatchResult(final_text=candidate, score=score, changed=True, candidate=candidate)


def select_engine(
    writing: WritingType,
    ocr_matches: Sequence[MatchResult],
    htr_matches: Sequence[MatchResult],
) -> EngineKind:
    """Pick the engine whose reference-match scores sum strictly higher.

    On equal sums the writing type decides: handwritten and combination
    labels use HTR, all others OCR. The chosen engine's text is used for
    every field on the label.
    """
    ocr_sum = sum(m.score or 0.0 for m in ocr_matches)
    htr_sum = sum(m.score or 0.0 for m in htr_matches)
    if ocr_sum > htr_sum:
        return EngineKind.OCR
    if htr_sum > ocr_sum:
        return EngineKind.HTR
    return EngineKind.HTR if writing in HTR_PREFERRED else EngineKind.OCR


@dataclass(frozen=True)
class FieldTranscription:
    """Per-field record of everything both engines produced and how it was resolved."""

    field: LabelFieldClass
    ocr_text: str
    htr_text: str
    normalized_ocr: str
    normalized_htr: str
    ocr_match: MatchResult | None
    htr_match: MatchResult | None
    selected_engine: EngineKind
    pre_llm_text: str
    final_text: str
    score: float | None

    @property
    def matchable(self) -> bool:
        return self.field in MATCHABLE_FIELDS

    @property
    def selected_match(self) -> MatchResult | None:
        return self.ocr_match if self.selected_engine is EngineKind.OCR else self.htr_match

    @property
    def changed_by_matching(self) -> bool:
        match = self.selected_match
        return match is not None and match.changed

    @property
    def changed_by_llm(self) -> bool:
        return self.final_text != self.pre_llm_text
