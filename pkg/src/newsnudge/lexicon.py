"""Topic keyword lists: loading, whole-token trigger detection, user topic labels.

Matching is deliberately strict: a keyword only counts when it appears as a
whole case-insensitive token, where token boundaries are any non-alphanumeric
character. This keeps trigger detection free of substring false positives
("NBAish" never matches "nba").
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

TOPICS = ("sports", "entertainment", "lifestyle")
UNCLASSIFIED = "unclassified"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class LexiconError(ValueError):
    """Raised when a keyword file violates lexicon invariants."""


@dataclass(frozen=True)
class KeywordEntry:
    keyword: str
    topic: str


class Lexicon:
    """Immutable keyword registry keyed by lowercase token."""

    def __init__(self, entries: Iterable[KeywordEntry]):
        by_keyword: dict[str, str] = {}
        for entry in entries:
            if not entry.keyword:
                raise LexiconError("empty keyword")
            if entry.topic not in TOPICS:
                raise LexiconError(f"unknown topic {entry.topic!r} for keyword {entry.keyword!r}")
            if entry.keyword in by_keyword:
                raise LexiconError(f"duplicate keyword {entry.keyword!r}")
            by_keyword[entry.keyword] = entry.topic
        self._topics = by_keyword

    def __len__(self) -> int:
        return len(self._topics)

    def __contains__(self, keyword: str) -> bool:
        return keyword in self._topics

    def topic_of(self, keyword: str) -> str:
        return self._topics[keyword]

    @property
    def entries(self) -> list[KeywordEntry]:
        return [KeywordEntry(k, t) for k, t in sorted(self._topics.items())]

    @property
    def counts_by_topic(self) -> dict[str, int]:
        counts = Counter(self._topics.values())
        return {topic: counts.get(topic, 0) for topic in TOPICS}

    def keywords_for(self, topic: str) -> list[str]:
        return sorted(k for k, t in self._topics.items() if t == topic)


def tokenize(text: str) -> list[str]:
    """Lowercase tokens of ``text``, split on any non-alphanumeric character."""
    return _TOKEN_RE.findall(text.lower())


def load_lexicon(path: str | Path) -> Lexicon:
    """Load a ``keyword,topic`` CSV, rejecting duplicates and unknown topics.

    Keywords are lowercased and trimmed on ingest. Errors name the offending
    row numbers (1-based, header included) so bad files are easy to fix.
    """
    path = Path(path)
    seen: dict[str, int] = {}
    entries: list[KeywordEntry] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["keyword", "topic"]:
            raise LexiconError(f"{path}: expected 'keyword,topic' header")
        for row_no, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise LexiconError(f"{path}: row {row_no} has fewer than 2 columns")
            keyword = row[0].strip().lower()
            topic = row[1].strip().lower()
            if not keyword:
                raise LexiconError(f"{path}: row {row_no} has an empty keyword")
            if topic not in TOPICS:
                raise LexiconError(f"{path}: row {row_no} has unknown topic {topic!r}")
            if keyword in seen:
                raise LexiconError(
                    f"{path}: duplicate keyword {keyword!r} at rows {seen[keyword]} and {row_no}"
                )
            seen[keyword] = row_no
            entries.append(KeywordEntry(keyword, topic))
    return Lexicon(entries)


def save_lexicon(lexicon: Lexicon, path: str | Path) -> None:
    """Write the normalized CSV form (sorted, lowercase, LF endings)."""
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write("keyword,topic\n")
        for entry in lexicon.entries:
            fh.write(f"{entry.keyword},{entry.topic}\n")


def match_keywords(text: str, lexicon: Lexicon) -> list[tuple[str, str]]:
    """All lexicon keywords appearing as whole tokens of ``text``.

    Each keyword is reported once, ordered by its first occurrence.
    """
    matches: list[tuple[str, str]] = []
    seen: set[str] = set()
    for token in tokenize(text):
        if token in lexicon and token not in seen:
            seen.add(token)
            matches.append((token, lexicon.topic_of(token)))
    return matches


def classify_user_topic(posts: Sequence[str], lexicon: Lexicon) -> str:
    """Label a user by the topic most of their posts match.

    Votes are posts containing at least one keyword of a topic; ties fall back
    to total keyword hits and then to a fixed priority (sports, entertainment,
    lifestyle). Returns ``"unclassified"`` when no post matches anything.
    """
    if not posts:
        raise ValueError("posts must be non-empty")
    post_votes: Counter[str] = Counter()
    total_hits: Counter[str] = Counter()
    for post in posts:
        matched = match_keywords(post, lexicon)
        for _, topic in matched:
            total_hits[topic] += 1
        for topic in {topic for _, topic in matched}:
            post_votes[topic] += 1
    if not post_votes:
        return UNCLASSIFIED
    return max(
        post_votes,
        key=lambda t: (post_votes[t], total_hits[t], -TOPICS.index(t)),
    )


def default_lexicon_path() -> Path:
    return Path(__file__).parent / "data" / "keywords.csv"
