"""Reference taxon name lists loaded into immutable per-rank indices."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import MATCHABLE_FIELDS, LabelFieldClass
from .matcher import gestalt_similarity, similarity_upper_bound

logger = logging.getLogger(__name__)

#: Ranks for which a reference index exists.
RANKS: tuple[LabelFieldClass, ...] = MATCHABLE_FIELDS

# Character counts are hashed into this many buckets for the vectorized
# upper-bound prune; collisions only loosen the bound, never break it.
_BUCKETS = 64
# Names longer than a uint8 count can hold bypass the prune entirely.
_MAX_PRUNED_LEN = 255


class ReferenceLoadError(RuntimeError):
    """A reference source file could not be read or parsed."""


class _ScanCache:
    """Vectorized per-name character-count table backing the pruned scan."""

    def __init__(self, names: Sequence[str]):
        short: list[str] = []
        self.long_names: list[str] = []
        for name in names:
            (short if len(name) <= _MAX_PRUNED_LEN else self.long_names).append(name)
        self.names = short
        n = len(short)
        self.lengths = np.fromiter((len(nm) for nm in short), dtype=np.int64, count=n)
        counts = np.zeros((n, _BUCKETS), dtype=np.uint8)
        chunk = 100_000
        for start in range(0, n, chunk):
            block = short[start : start + chunk]
            codes = np.frombuffer("".join(block).encode("utf-32-le"), dtype=np.uint32)
            ids = np.repeat(
                np.arange(len(block), dtype=np.int64), self.lengths[start : start + len(block)]
            )
            flat = ids * _BUCKETS + (codes % _BUCKETS)
            counts[start : start + len(block)] = np.bincount(
                flat, minlength=len(block) * _BUCKETS
            ).reshape(len(block), _BUCKETS)
        self.counts = counts

    def candidates(self, text: str, cutoff: float) -> list[tuple[str, float]]:
        """(name, upper bound) pairs whose bound reaches the cutoff, best bound first."""
        n = len(text)
        q = np.bincount(
            np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32) % _BUCKETS,
            minlength=_BUCKETS,
        )
        q = np.minimum(q, _MAX_PRUNED_LEN).astype(np.uint8)
        shared = np.minimum(self.counts, q).sum(axis=1, dtype=np.int64)
        bounds = 2.0 * shared / (self.lengths + n)
        keep = np.nonzero(bounds >= cutoff)[0]
        keep = keep[np.argsort(-bounds[keep], kind="stable")]
        return [(self.names[i], float(bounds[i])) for i in keep]


class NameIndex:
    """Immutable per-rank reference list supporting exact and fuzzy lookup."""

    def __init__(self, rank: LabelFieldClass, names: Iterable[str]):
        if rank not in RANKS:
            raise ValueError(f"no reference index for rank {rank!r}")
        self.rank = rank
        canonical: list[str] = []
        fold_map: dict[str, str] = {}
        for raw in names:
            name = raw.strip()
            if not name:
                continue
            folded = name.casefold()
            if folded not in fold_map:
                fold_map[folded] = name
                canonical.append(name)
        self.names: tuple[str, ...] = tuple(canonical)
        self.fold_map: dict[str, str] = fold_map
        buckets: dict[int, list[str]] = {}
        for name in canonical:
            buckets.setdefault(len(name), []).append(name)
        self.length_buckets: dict[int, tuple[str, ...]] = {
            length: tuple(group) for length, group in buckets.items()
        }
        self._scan_cache: _ScanCache | None = None

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NameIndex):
            return NotImplemented
        return self.rank == other.rank and self.names == other.names

    def __repr__(self) -> str:
        return f"NameIndex(rank={self.rank.value!r}, names={len(self.names)})"

    def exact(self, text: str) -> str | None:
        """Case-insensitive exact hit, returning the canonical spelling."""
        return self.fold_map.get(text.casefold())

    def prepare_scan(self) -> None:
        """Build the prune tables up front (otherwise built on first scan)."""
        if self._scan_cache is None:
            self._scan_cache = _ScanCache(self.names)

    def scan(self, text: str, cutoff: float, prune: bool = True) -> tuple[str, float] | None:
        """Best candidate by Gestalt similarity, or None if none reaches the cutoff.

        Ties on similarity are broken lexicographically ascending on the
        candidate. The pruned path skips only names whose character-count
        upper bound falls below the cutoff, so it returns exactly what the
        full scan would.
        """
        if not text or not self.names:
            return None
        if prune:
            self.prepare_scan()
            assert self._scan_cache is not None
            ordered = self._scan_cache.candidates(text, cutoff)
            long_tail = self._scan_cache.long_names
        else:
            ordered = [(name, similarity_upper_bound(len(text), len(name))) for name in self.names]
            long_tail = []

        best_name: str | None = None
        best_score = 0.0
        for name, bound in ordered:
            if prune and best_name is not None and bound < best_score:
                # ordered by descending bound, so no later name can beat or tie
                break
            score = gestalt_similarity(text, name)
            if score > best_score or (
                score == best_score and best_name is not None and name < best_name
            ):
                best_name, best_score = name, score
        for name in long_tail:
            score = gestalt_similarity(text, name)
            if score > best_score or (
                score == best_score and best_name is not None and name < best_name
            ):
                best_name, best_score = name, score

        if best_name is None or best_score < cutoff:
            return None
        return best_name, best_score


def _read_source(path: Path, csv_column: str | None) -> list[str]:
    try:
        if path.suffix.lower() == ".csv":
            if not csv_column:
                raise ReferenceLoadError(f"{path}: CSV sources need a name column")
            with open(path, newline="", encoding="utf-8") as handle:
                reader = csv.DictReader(handle)
                if reader.fieldnames is None or csv_column not in reader.fieldnames:
                    raise ReferenceLoadError(f"{path}: no column {csv_column!r}")
                return [row[csv_column] or "" for row in reader]
        return path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ReferenceLoadError(f"cannot read reference source {path}: {exc}") from exc


def load_index(
    rank: LabelFieldClass, sources: Iterable[Path], csv_column: str | None = None
) -> NameIndex:
    """Union of all sources: trimmed, deduplicated case-insensitively (first spelling wins)."""
    names: list[str] = []
    for source in sources:
        names.extend(_read_source(Path(source), csv_column))
    index = NameIndex(rank, names)
    if not index.names:
        logger.warning("reference index for %s is empty; all matches will score 0", rank.value)
    return index


def load_reference_dir(ref_dir: Path) -> dict[LabelFieldClass, NameIndex]:
    """Load ``{family,genus,species,authority}.txt`` from a reference directory."""
    ref_dir = Path(ref_dir)
    return {rank: load_index(rank, [ref_dir / f"{rank.value}.txt"]) for rank in RANKS}


def default_reference_dir() -> Path:
    """Directory of the bundled sample name lists."""
    return Path(__file__).parent / "data" / "reference"


def exact_lookup(index: NameIndex, text: str) -> str | None:
    return index.exact(text)
