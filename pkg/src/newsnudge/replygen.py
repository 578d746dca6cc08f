"""Bot reply production: sanitize, generate, gate, fall back, compose.

The contextual text comes from a pluggable generator (a deterministic
reference implementation or an HTTP text-generation service). Every draft runs
through deterministic quality gates; any failure falls back to a uniformly
sampled template. Also houses the audit utilities for annotated response
quality and reply sentiment.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from .lexicon import tokenize

PLATFORM_CHAR_CAP = 280
ECHO_TRIGRAM_THRESHOLD = 0.5

_DATA = Path(__file__).parent / "data"

_URL_TOKEN_RE = re.compile(
    r"""^(?:https?://\S+|www\.\S+|[\w.-]+\.(?:com|org|net|io|co|gov|edu|tv|ly|me|us|uk)(?:/\S*)?)$""",
    re.IGNORECASE,
)
_ALLOWED_PUNCT = set(".,!?'\"-")


class SanitizeError(ValueError):
    """Nothing usable remained after cleaning the input post."""


class GeneratorError(RuntimeError):
    """A generator failed to produce a draft."""


class ComposeError(ValueError):
    """The fixed reply scaffold does not fit the platform length cap."""


def load_wordlist(path: str | Path) -> frozenset[str]:
    """One lowercase token per line; blank lines ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(line.strip().lower() for line in lines if line.strip())


def load_lines(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]


def sanitize_input(text: str) -> str:
    """Strip URLs and out-of-class characters, collapse whitespace.

    URLs (scheme-prefixed or bare-domain) are dropped wholesale; @-mentions
    keep their word but lose the '@' through the character filter. Raises
    SanitizeError when nothing remains to respond to.
    """
    kept_tokens = [t for t in text.split() if not _URL_TOKEN_RE.match(t)]
    cleaned_chars = []
    for ch in " ".join(kept_tokens):
        if ch.isalpha() or ch.isdigit() or ch.isspace() or ch in _ALLOWED_PUNCT:
            cleaned_chars.append(ch)
    cleaned = " ".join("".join(cleaned_chars).split())
    if not cleaned:
        raise SanitizeError("input is empty after cleaning")
    return cleaned


@dataclass(frozen=True)
class GateVerdict:
    passed: bool
    failed_gate: str | None = None


@dataclass(frozen=True)
class GateLexicons:
    profanity: frozenset[str]
    platform_terms: frozenset[str]
    generic_responses: tuple[str, ...]

    @classmethod
    def default(cls) -> "GateLexicons":
        return cls(
            profanity=load_wordlist(_DATA / "profanity.txt"),
            platform_terms=load_wordlist(_DATA / "platform_terms.txt"),
            generic_responses=tuple(load_lines(_DATA / "generic_responses.txt")),
        )


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _char_trigrams(text: str) -> set[str]:
    return {text[i : i + 3] for i in range(len(text) - 2)}


def echo_similarity(draft: str, original: str) -> float:
    """Jaccard overlap of character trigrams on normalized text."""
    a, b = _char_trigrams(_normalize(draft)), _char_trigrams(_normalize(original))
    if not a and not b:
        return 1.0 if _normalize(draft) == _normalize(original) else 0.0
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def apply_quality_gates(draft: str, cleaned_input: str, lexicons: GateLexicons) -> GateVerdict:
    """Run the fixed gate sequence; first failure wins.

    Order: echo, generic fallback, profanity, platform-specific terms.
    """
    if not draft:
        raise ValueError("draft must be non-empty")
    if echo_similarity(draft, cleaned_input) >= ECHO_TRIGRAM_THRESHOLD:
        return GateVerdict(False, "echo")
    norm = _normalize(draft)
    if any(norm == _normalize(g) for g in lexicons.generic_responses):
        return GateVerdict(False, "generic")
    tokens = set(tokenize(draft))
    if tokens & lexicons.profanity:
        return GateVerdict(False, "profanity")
    if tokens & lexicons.platform_terms:
        return GateVerdict(False, "platform_terms")
    return GateVerdict(True)


class Generator(Protocol):
    def generate(self, text: str) -> str: ...


class ReferenceGenerator:
    """Deterministic stand-in for the neural generator.

    Picks a response from a fixed bank keyed by a hash of the cleaned input,
    optionally weaving in the input's lead token so drafts stay loosely
    contextual.
    """

    _BANK = (
        "That's a bold opinion about {w}, but I can see it.",
        "Everyone seems to have strong feelings about {w} lately.",
        "Honestly, {w} has been the highlight of my week.",
        "I keep going back and forth on {w} myself.",
        "You make a fair point, {w} deserves more attention.",
    )

    def generate(self, text: str) -> str:
        if not text.strip():
            raise GeneratorError("empty input")
        tokens = tokenize(text)
        word = max(tokens, key=len) if tokens else "this"
        idx = sum(ord(c) for c in text) % len(self._BANK)
        return self._BANK[idx].format(w=word)


class HttpGenerator:
    """Client for an external text-generation service.

    POSTs ``{"input": text}`` and expects ``{"draft": text}`` back. Each call
    builds an independent request, so concurrent use is safe.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, text: str) -> str:
        try:
            resp = requests.post(self.endpoint, json={"input": text}, timeout=self.timeout)
            resp.raise_for_status()
            draft = resp.json().get("draft", "")
        except (requests.RequestException, ValueError) as exc:
            raise GeneratorError(f"generation service failed: {exc}") from exc
        if not draft:
            raise GeneratorError("generation service returned an empty draft")
        return draft


def generate_reply(
    raw_input: str,
    generator: Generator,
    templates: Sequence[str],
    rng: np.random.Generator,
    lexicons: GateLexicons,
) -> tuple[str, str]:
    """Produce the contextual part of a reply.

    Returns (text, provenance) where provenance is "generated" when the
    gated draft survived and "template" on any generation or gate failure.
    """
    if not templates:
        raise ValueError("templates must be non-empty")
    try:
        cleaned = sanitize_input(raw_input)
        draft = generator.generate(cleaned)
        if apply_quality_gates(draft, cleaned, lexicons).passed:
            return draft, "generated"
    except (SanitizeError, GeneratorError):
        pass
    return templates[int(rng.integers(len(templates)))], "template"


@dataclass(frozen=True)
class ComposedReply:
    contextual: str
    topic: str
    outlet_handle: str
    url: str
    full_text: str


def _scaffold(topic: str, url: str, handle: str) -> str:
    return f" To learn more about {topic} click {url} and follow {handle}."


def compose_reply(contextual: str, topic: str, handle: str, url: str) -> ComposedReply:
    """Assemble the full reply, truncating the contextual part (never the
    URL or handle) at a word boundary to fit the 280-character cap."""
    tail = _scaffold(topic, url, handle)
    budget = PLATFORM_CHAR_CAP - len(tail)
    if budget <= 0:
        raise ComposeError("URL and scaffold alone exceed the platform cap")
    text = contextual.strip()
    if len(text) > budget:
        cut = text[:budget]
        if " " in cut:
            cut = cut[: cut.rfind(" ")]
        text = cut.rstrip()
    full = text + tail
    return ComposedReply(text, topic, handle, url, full)


_REPLY_RE = re.compile(
    r"^(?P<contextual>.*?)\s?To learn more about (?P<topic>\S+) click "
    r"(?P<url>\S+) and follow (?P<handle>@\S+)\.$",
    re.DOTALL,
)


def parse_reply(full_text: str) -> ComposedReply:
    """Inverse of compose_reply; raises ValueError on malformed text."""
    m = _REPLY_RE.match(full_text)
    if not m:
        raise ValueError("text does not match the reply scaffold")
    return ComposedReply(
        contextual=m.group("contextual"),
        topic=m.group("topic"),
        outlet_handle=m.group("handle"),
        url=m.group("url"),
        full_text=full_text,
    )


def default_templates() -> list[str]:
    return load_lines(_DATA / "templates.txt")


SATISFACTORY = "satisfactory"
UNSATISFACTORY = "unsatisfactory"


def audit_majority_vote(matrix: Sequence[Sequence[str]]) -> tuple[int, int, float]:
    """Per-row majority vote over annotator labels.

    Returns (satisfactory rows, unsatisfactory rows, satisfactory rate). A row
    counts as satisfactory with at least ceil((k+1)/2) satisfactory cells.
    """
    if not matrix:
        raise ValueError("annotation matrix is empty")
    k = len(matrix[0])
    if k < 3:
        raise ValueError("need at least 3 annotators")
    need = math.ceil((k + 1) / 2)
    satisfactory = 0
    for i, row in enumerate(matrix):
        if len(row) != k:
            raise ValueError(f"ragged annotation matrix at row {i}")
        bad = set(row) - {SATISFACTORY, UNSATISFACTORY}
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)} at row {i}")
        if sum(1 for cell in row if cell == SATISFACTORY) >= need:
            satisfactory += 1
    total = len(matrix)
    return satisfactory, total - satisfactory, satisfactory / total


SENTIMENTS = ("positive", "negative", "neutral")


def aggregate_sentiment(
    labels: Sequence[tuple[str, str]],
) -> dict[str, dict[str, tuple[int, float]]]:
    """Counts and two-decimal percentages of reply sentiment per bot gender."""
    by_gender: dict[str, Counter] = {}
    for gender, sentiment in labels:
        if sentiment not in SENTIMENTS:
            raise ValueError(f"unknown sentiment {sentiment!r}")
        by_gender.setdefault(gender, Counter())[sentiment] += 1
    table: dict[str, dict[str, tuple[int, float]]] = {}
    for gender in sorted(by_gender):
        counts = by_gender[gender]
        total = sum(counts.values())
        table[gender] = {
            s: (counts.get(s, 0), round(100.0 * counts.get(s, 0) / total, 2))
            for s in SENTIMENTS
        }
    return table


class ValenceSentimentScorer:
    """Reference sentiment classifier: whole-token valence wordlist counts."""

    def __init__(self, positive: frozenset[str] | None = None, negative: frozenset[str] | None = None):
        self.positive = positive if positive is not None else load_wordlist(_DATA / "sentiment_positive.txt")
        self.negative = negative if negative is not None else load_wordlist(_DATA / "sentiment_negative.txt")

    def classify(self, text: str) -> str:
        tokens = tokenize(text)
        score = sum(t in self.positive for t in tokens) - sum(t in self.negative for t in tokens)
        if score > 0:
            return "positive"
        if score < 0:
            return "negative"
        return "neutral"
