"""MovieLens-format ingestion, popularity counting, and title resolution.

Flat-file ingestion only: ``movies.dat`` (``MovieID::Title (Year)::Genres``)
and ``ratings.dat`` (``UserID::MovieID::Rating::Timestamp``). The parsed
catalog, popularity table, and title index are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "CatalogEntry",
    "Interaction",
    "ParseIssue",
    "ParseError",
    "PopularityTable",
    "TitleKey",
    "TitleIndex",
    "parse_movies",
    "parse_ratings",
    "read_movies_file",
    "read_ratings_file",
    "compute_popularity",
    "normalize_title",
    "levenshtein",
]

# Title field ends in "(YYYY)"; anything without it keeps year=0.
_YEAR_RE = re.compile(r"^(?P<title>.*?)\s*\((?P<year>\d{4})\)\s*$")
_TRAILING_ARTICLE_RE = re.compile(r"^(?P<body>.+?),\s*(?:the|a|an)$")
_LEADING_ARTICLE_RE = re.compile(r"^(?:the|a|an)\s+(?P<body>.+)$")
_PUNCT_RE = re.compile(r"[^a-z0-9\s]")
_WS_RE = re.compile(r"\s+")


class ParseError(ValueError):
    """Raised in strict mode on the first malformed input line."""


@dataclass(frozen=True)
class ParseIssue:
    """One malformed line recorded during lenient parsing."""

    line_no: int
    line: str
    reason: str

    def __str__(self) -> str:
        return f"line {self.line_no}: {self.reason} ({self.line!r})"


@dataclass(frozen=True)
class CatalogEntry:
    item: int
    title: str
    year: int
    genres: tuple[str, ...] = ()


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    rating: float
    timestamp: int


@dataclass(frozen=True)
class TitleKey:
    normalized_title: str
    year: int


class PopularityTable(Mapping):
    """Raw popularity per item: the count of ratings it received.

    Only items with at least one interaction appear; every stored score is
    therefore >= 1. Behaves as a read-only mapping from item id to score.
    """

    def __init__(self, scores: Mapping[int, float]):
        self._scores = dict(scores)

    def __getitem__(self, item: int) -> float:
        return self._scores[item]

    def __iter__(self) -> Iterator[int]:
        return iter(self._scores)

    def __len__(self) -> int:
        return len(self._scores)

    def __repr__(self) -> str:
        return f"PopularityTable({len(self._scores)} items)"

    @property
    def total(self) -> float:
        return sum(self._scores.values())


def _iter_clean_lines(lines: Iterable[str]) -> Iterator[tuple[int, str]]:
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if line.strip():
            yield line_no, line


def parse_movies(
    lines: Iterable[str], strict: bool = False
) -> tuple[list[CatalogEntry], list[ParseIssue]]:
    """Parse ``MovieID::Title (Year)::Genre1|Genre2`` lines.

    Lenient mode (default) records malformed lines as :class:`ParseIssue`
    and keeps going; strict mode raises :class:`ParseError` at the first.
    Titles without a trailing ``(YYYY)`` are kept with ``year=0``.
    """
    entries: list[CatalogEntry] = []
    issues: list[ParseIssue] = []

    def bad(line_no: int, line: str, reason: str) -> None:
        if strict:
            raise ParseError(f"movies line {line_no}: {reason}")
        issues.append(ParseIssue(line_no, line, reason))

    for line_no, line in _iter_clean_lines(lines):
        parts = line.split("::")
        if len(parts) != 3:
            bad(line_no, line, "expected 3 '::'-separated fields")
            continue
        raw_id, raw_title, raw_genres = parts
        try:
            item = int(raw_id)
        except ValueError:
            bad(line_no, line, "movie id is not an integer")
            continue
        if item < 0:
            bad(line_no, line, "movie id is negative")
            continue
        m = _YEAR_RE.match(raw_title.strip())
        if m:
            title = m.group("title").strip()
            year = int(m.group("year"))
        else:
            title = raw_title.strip()
            year = 0
        if not title:
            bad(line_no, line, "empty title")
            continue
        genres = tuple(g for g in (t.strip() for t in raw_genres.split("|")) if g)
        entries.append(CatalogEntry(item=item, title=title, year=year, genres=genres))
    return entries, issues


def parse_ratings(
    lines: Iterable[str], strict: bool = False
) -> tuple[list[Interaction], list[ParseIssue]]:
    """Parse ``UserID::MovieID::Rating::Timestamp`` lines.

    Same lenient/strict contract as :func:`parse_movies`. Ratings must fall
    in [0.5, 5.0] and timestamps must be non-negative.
    """
    interactions: list[Interaction] = []
    issues: list[ParseIssue] = []

    def bad(line_no: int, line: str, reason: str) -> None:
        if strict:
            raise ParseError(f"ratings line {line_no}: {reason}")
        issues.append(ParseIssue(line_no, line, reason))

    for line_no, line in _iter_clean_lines(lines):
        parts = line.split("::")
        if len(parts) != 4:
            bad(line_no, line, "expected 4 '::'-separated fields")
            continue
        raw_user, raw_item, raw_rating, raw_ts = parts
        try:
            user = int(raw_user)
            item = int(raw_item)
            rating = float(raw_rating)
            timestamp = int(raw_ts)
        except ValueError:
            bad(line_no, line, "non-numeric field")
            continue
        if not 0.5 <= rating <= 5.0:
            bad(line_no, line, f"rating {rating} outside [0.5, 5.0]")
            continue
        if timestamp < 0:
            bad(line_no, line, "negative timestamp")
            continue
        interactions.append(
            Interaction(user=user, item=item, rating=rating, timestamp=timestamp)
        )
    return interactions, issues


def _read_lines(path: str | Path) -> list[str]:
    # MovieLens dumps are nominally UTF-8 but old ones contain latin-1 bytes.
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        text = data.decode("latin-1")
    return text.splitlines()


def read_movies_file(
    path: str | Path, strict: bool = False
) -> tuple[list[CatalogEntry], list[ParseIssue]]:
    return parse_movies(_read_lines(path), strict=strict)


def read_ratings_file(
    path: str | Path, strict: bool = False
) -> tuple[list[Interaction], list[ParseIssue]]:
    return parse_ratings(_read_lines(path), strict=strict)


def compute_popularity(interactions: Iterable[Interaction]) -> PopularityTable:
    """Count ratings per item. Every interaction counts, duplicates included."""
    counts: Counter[int] = Counter()
    for it in interactions:
        counts[it.item] += 1
    if not counts:
        raise ValueError("no interactions: popularity table would be empty")
    return PopularityTable(counts)


def normalize_title(title: str, year: int) -> TitleKey:
    """Build the canonical lookup key for a movie title.

    Lowercases, strips diacritics, rotates a trailing ", The"/", A"/", An"
    to the front and drops it together with any leading article, removes
    punctuation, and collapses whitespace.
    """
    if not title or not title.strip():
        raise ValueError("title must be non-empty")
    text = title.strip().lower()
    text = unicodedata.normalize("NFKD", text)
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    m = _TRAILING_ARTICLE_RE.match(text)
    if m:
        text = m.group("body")
    text = _PUNCT_RE.sub("", text)
    text = _WS_RE.sub(" ", text).strip()
    # Articles are stripped after punctuation removal (which can expose
    # one), iterating so the result is a fixed point of normalization.
    while True:
        m = _LEADING_ARTICLE_RE.match(text)
        if not m:
            break
        text = m.group("body").strip()
    return TitleKey(normalized_title=text, year=year)


def levenshtein(a: str, b: str, cap: int | None = None) -> int:
    """Edit distance between two strings, optionally short-circuited at cap."""
    if a == b:
        return 0
    if cap is not None and abs(len(a) - len(b)) > cap:
        return cap + 1
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        row_min = i
        for j, cb in enumerate(b, start=1):
            cost = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            )
            current.append(cost)
            row_min = min(row_min, cost)
        if cap is not None and row_min > cap:
            return cap + 1
        previous = current
    return previous[-1]


@dataclass
class TitleIndex:
    """Lookup from normalized (title, year) keys to catalog items.

    Resolution order: exact key, then year +/- 1, then unique fuzzy match
    with edit distance <= 2 over the year-window candidates. Ambiguity at
    any stage resolves to ``None`` rather than guessing an item.
    """

    max_edit_distance: int = 2
    _exact: dict[tuple[str, int], list[int]] = field(default_factory=dict)
    _by_year: dict[int, list[tuple[str, int]]] = field(default_factory=dict)
    _entries: dict[int, CatalogEntry] = field(default_factory=dict)

    @classmethod
    def build(cls, entries: Iterable[CatalogEntry], max_edit_distance: int = 2) -> "TitleIndex":
        index = cls(max_edit_distance=max_edit_distance)
        for entry in entries:
            key = normalize_title(entry.title, entry.year)
            index._exact.setdefault((key.normalized_title, key.year), []).append(entry.item)
            index._by_year.setdefault(key.year, []).append((key.normalized_title, entry.item))
            index._entries[entry.item] = entry
        return index

    def entry(self, item: int) -> CatalogEntry:
        return self._entries[item]

    def __len__(self) -> int:
        return len(self._entries)

    def resolve(self, title: str, year: int) -> int | None:
        """Resolve a free-text title to an item id, or None when unmatched."""
        key = normalize_title(title, year)

        hits = self._exact.get((key.normalized_title, key.year), [])
        if len(hits) == 1:
            return hits[0]
        if len(hits) > 1:
            return None

        # Year-0 entries carry no usable year and stay out of tolerant stages.
        if year <= 0:
            return None
        near = [
            item
            for y in (year - 1, year + 1)
            if y > 0
            for item in self._exact.get((key.normalized_title, y), [])
        ]
        if len(near) == 1:
            return near[0]
        if len(near) > 1:
            return None

        best_distance = self.max_edit_distance + 1
        best_items: list[int] = []
        for y in (year - 1, year, year + 1):
            if y <= 0:
                continue
            for candidate_title, item in self._by_year.get(y, []):
                d = levenshtein(key.normalized_title, candidate_title, cap=self.max_edit_distance)
                if d < best_distance:
                    best_distance = d
                    best_items = [item]
                elif d == best_distance:
                    best_items.append(item)
        if best_distance <= self.max_edit_distance and len(best_items) == 1:
            return best_items[0]
        return None
