"""Pre/post engagement outcomes from last-100 activity windows.

Five outcomes per wave: news accounts followed (count) and the percentage of
the like / (re)tweet windows that is news or political content. Percentages
are absent (None), not zero, when the corresponding window is empty, so
inactive users never masquerade as disengaged ones.
"""

from __future__ import annotations

import csv
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .replygen import _URL_TOKEN_RE, load_wordlist
from .lexicon import tokenize
from .simulator import OUTCOMES

PCT_OUTCOMES = ("news_like_pct", "news_rt_pct", "pol_like_pct", "pol_rt_pct")


@dataclass(frozen=True)
class WindowItem:
    author_id: str
    text: str


@dataclass
class NewsHandleList:
    ids: frozenset[str]
    handles: dict[str, str]  # account id -> handle

    @classmethod
    def load(cls, path: str | Path | None = None) -> "NewsHandleList":
        if path is None:
            path = Path(__file__).parent / "data" / "news_handles.csv"
        handles: dict[str, str] = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                account_id = row["media_user_id"].strip()
                if account_id in handles:
                    raise ValueError(f"duplicate media_user_id {account_id}")
                handles[account_id] = row["handle"].strip()
        return cls(frozenset(handles), handles)


class PoliticalClassifier(Protocol):
    def classify(self, text: str) -> bool: ...


class KeywordPoliticalClassifier:
    """Reference political classifier: whole-token hits on a shipped term list."""

    def __init__(self, terms: frozenset[str] | None = None):
        if terms is None:
            terms = load_wordlist(Path(__file__).parent / "data" / "political_terms.txt")
        self.terms = terms

    def classify(self, text: str) -> bool:
        return any(token in self.terms for token in tokenize(text))


def strip_emojis_urls(text: str) -> str:
    """Drop URL tokens and symbol/emoji characters before classification."""
    kept = [t for t in text.split() if not _URL_TOKEN_RE.match(t)]
    chars = [
        ch
        for ch in " ".join(kept)
        if ord(ch) < 0x1F000
        and not 0xFE00 <= ord(ch) <= 0xFE0F  # emoji variation selectors
        and unicodedata.category(ch) not in ("So", "Sk", "Cs")
    ]
    return " ".join("".join(chars).split())


@dataclass
class EngagementSnapshot:
    user_id: str
    news_follows: int
    follow_total: int
    window_likes: int
    window_tweets: int
    news_like_pct: float | None
    news_rt_pct: float | None
    pol_like_pct: float | None
    pol_rt_pct: float | None


def snapshot_engagement(
    user_id: str,
    last_likes: Sequence[WindowItem],
    last_tweets: Sequence[WindowItem],
    followed: Iterable[str],
    handles: NewsHandleList,
    political: PoliticalClassifier,
) -> EngagementSnapshot:
    """One measurement wave for one user."""
    if len(last_likes) > 100 or len(last_tweets) > 100:
        raise ValueError("windows are capped at the last 100 items")
    followed_set = set(followed)

    def news_pct(items: Sequence[WindowItem]) -> float | None:
        if not items:
            return None
        hits = sum(1 for item in items if item.author_id in handles.ids)
        return 100.0 * hits / len(items)

    def pol_pct(items: Sequence[WindowItem]) -> float | None:
        if not items:
            return None
        hits = sum(1 for item in items if political.classify(strip_emojis_urls(item.text)))
        return 100.0 * hits / len(items)

    return EngagementSnapshot(
        user_id=user_id,
        news_follows=len(followed_set & handles.ids),
        follow_total=len(followed_set),
        window_likes=len(last_likes),
        window_tweets=len(last_tweets),
        news_like_pct=news_pct(last_likes),
        news_rt_pct=news_pct(last_tweets),
        pol_like_pct=pol_pct(last_likes),
        pol_rt_pct=pol_pct(last_tweets),
    )


@dataclass
class DeltaRecord:
    user_id: str
    arm: str
    treated: bool
    deltas: dict[str, float | None]
    follow_total_pre: int
    follow_total_post: int
    pol_pre_count: float = 0.0
    topic: str = "unclassified"
    inclusion: dict[str, bool] = field(default_factory=dict)


def compute_delta(
    pre: EngagementSnapshot,
    post: EngagementSnapshot,
    arm: str = "",
    treated: bool = False,
) -> DeltaRecord:
    """Field-wise post minus pre; a delta is absent when either side is."""
    if pre.user_id != post.user_id:
        raise ValueError(f"snapshot user mismatch: {pre.user_id} vs {post.user_id}")
    deltas: dict[str, float | None] = {
        "news_follows": float(post.news_follows - pre.news_follows)
    }
    for name in PCT_OUTCOMES:
        a, b = getattr(pre, name), getattr(post, name)
        deltas[name] = None if a is None or b is None else b - a
    return DeltaRecord(
        user_id=pre.user_id,
        arm=arm,
        treated=treated,
        deltas=deltas,
        follow_total_pre=pre.follow_total,
        follow_total_post=post.follow_total,
        pol_pre_count=pre.pol_rt_pct if pre.pol_rt_pct is not None else 0.0,
    )


@dataclass(frozen=True)
class ExclusionPolicy:
    """Follow-change plausibility band plus an optional absolute cap.

    The relative band is open ((-20%, +50%) by default, per the 'less than /
    more than' wording); the absolute cap is a strict '<' on the increase.
    Applies only to the following outcome.
    """

    rel_decrease: float = 0.20
    rel_increase: float = 0.50
    absolute_cap: int | None = 200

    @property
    def label(self) -> str:
        return "none" if self.absolute_cap is None else str(self.absolute_cap)


def follow_change_allowed(record: DeltaRecord, policy: ExclusionPolicy) -> tuple[bool, str]:
    """Whether the record's total-follow change is plausible under the policy."""
    pre, post = record.follow_total_pre, record.follow_total_post
    if pre == 0:
        if post == 0:
            return True, ""
        return False, "divide_by_zero"
    change = (post - pre) / pre
    if change >= policy.rel_increase or change <= -policy.rel_decrease:
        return False, "relative_band"
    if policy.absolute_cap is not None and (post - pre) >= policy.absolute_cap:
        return False, "absolute_cap"
    return True, ""


def apply_follow_exclusions(
    records: Sequence[DeltaRecord], policy: ExclusionPolicy
) -> list[DeltaRecord]:
    """The subset of records whose follow change passes the policy.

    Each record is also annotated under ``inclusion[policy.label]`` so later
    stages can report all policy variants side by side.
    """
    included = []
    for record in records:
        ok, _reason = follow_change_allowed(record, policy)
        record.inclusion[policy.label] = ok
        if ok:
            included.append(record)
    return included


_SNAPSHOT_COLUMNS = [
    "user_id",
    "news_follows",
    "follow_total",
    "window_likes",
    "window_tweets",
    "news_like_pct",
    "news_rt_pct",
    "pol_like_pct",
    "pol_rt_pct",
]


def save_snapshots(snapshots: Sequence[EngagementSnapshot], path: str | Path) -> None:
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SNAPSHOT_COLUMNS)
        for s in snapshots:
            writer.writerow(
                [
                    s.user_id,
                    s.news_follows,
                    s.follow_total,
                    s.window_likes,
                    s.window_tweets,
                ]
                + [
                    "" if getattr(s, name) is None else f"{getattr(s, name):.6f}"
                    for name in PCT_OUTCOMES
                ]
            )


def load_snapshots(path: str | Path) -> list[EngagementSnapshot]:
    snapshots = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            snapshots.append(
                EngagementSnapshot(
                    user_id=row["user_id"],
                    news_follows=int(row["news_follows"]),
                    follow_total=int(row["follow_total"]),
                    window_likes=int(row["window_likes"]),
                    window_tweets=int(row["window_tweets"]),
                    **{
                        name: float(row[name]) if row[name] != "" else None
                        for name in PCT_OUTCOMES
                    },
                )
            )
    return snapshots


_DELTA_COLUMNS = (
    ["user_id", "arm", "treated"]
    + list(OUTCOMES)
    + ["follow_total_pre", "follow_total_post", "pol_pre_count", "topic"]
)


def save_deltas(records: Sequence[DeltaRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_DELTA_COLUMNS)
        for r in records:
            writer.writerow(
                [r.user_id, r.arm, int(r.treated)]
                + [
                    "" if r.deltas.get(name) is None else f"{r.deltas[name]:.6f}"
                    for name in OUTCOMES
                ]
                + [r.follow_total_pre, r.follow_total_post, f"{r.pol_pre_count:.4f}", r.topic]
            )


def load_deltas(path: str | Path) -> list[DeltaRecord]:
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(
                DeltaRecord(
                    user_id=row["user_id"],
                    arm=row["arm"],
                    treated=row["treated"] == "1",
                    deltas={
                        name: float(row[name]) if row[name] != "" else None
                        for name in OUTCOMES
                    },
                    follow_total_pre=int(row["follow_total_pre"]),
                    follow_total_post=int(row["follow_total_post"]),
                    pol_pre_count=float(row["pol_pre_count"]),
                    topic=row["topic"],
                )
            )
    return records
