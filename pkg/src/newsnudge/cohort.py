"""Experimental user pool construction: the staged selection funnel.

Candidates flow through six predicate stages (geography/language, account
hygiene, minimum activity, activity cap, follower/following bands, bot score).
The activity-cap threshold is resolved once, up front, from the candidate
table, so every stage is a pure predicate and the final survivor set does not
depend on stage order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


class CohortConfigError(ValueError):
    """Raised for contradictory filter parameters."""


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    us_based: bool
    english: bool
    verified: bool
    username: str
    followers: int
    following: int
    statuses: int
    favorites: int
    listed: int
    bot_score: float
    weekly_keyword_tweets: int
    reply_only: bool


@dataclass
class FilterConfig:
    """Funnel parameters. ``activity_cap`` is either ``"p90"`` (nearest-rank
    percentile of candidates with at least ``min_keyword_tweets`` relevant
    tweets) or an absolute integer cap, e.g. 20."""

    min_keyword_tweets: int = 2
    activity_cap: int | str = "p90"
    followers_min: int = 79
    followers_max: int = 16500
    following_min: int = 127
    following_max: int = 4500
    bot_score_max: float = 0.6

    def validate(self) -> None:
        if self.followers_min > self.followers_max:
            raise CohortConfigError("followers band has min > max")
        if self.following_min > self.following_max:
            raise CohortConfigError("following band has min > max")


@dataclass
class CohortReport:
    stage_names: list[str]
    stage_counts: list[int]
    final_ids: set[str]
    activity_cap_used: int = 0
    exclusion_reasons: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage_names": self.stage_names,
                "stage_counts": self.stage_counts,
                "final_ids": sorted(self.final_ids),
                "activity_cap_used": self.activity_cap_used,
                "exclusion_reasons": dict(sorted(self.exclusion_reasons.items())),
            },
            indent=2,
        )


def percentile_threshold(values: Sequence[int], p: float) -> int:
    """Nearest-rank percentile: the value at rank ceil(p/100 * n) of the sort."""
    if not values:
        raise ValueError("percentile of empty input")
    if not 0 < p < 100:
        raise ValueError("percentile must be in (0, 100)")
    ordered = sorted(values)
    rank = math.ceil(p / 100.0 * len(ordered))
    return ordered[rank - 1]


STAGE_NAMES = [
    "us_english",
    "account_hygiene",
    "min_activity",
    "activity_cap",
    "audience_band",
    "bot_score",
]


def resolve_activity_cap(candidates: Sequence[UserProfile], config: FilterConfig) -> int:
    if isinstance(config.activity_cap, int):
        return config.activity_cap
    if config.activity_cap != "p90":
        raise CohortConfigError(f"unknown activity cap {config.activity_cap!r}")
    relevant = [
        c.weekly_keyword_tweets
        for c in candidates
        if c.weekly_keyword_tweets >= config.min_keyword_tweets
    ]
    if not relevant:
        raise CohortConfigError("no candidate reaches the minimum activity; cannot set p90 cap")
    return percentile_threshold(relevant, 90)


def stage_predicates(config: FilterConfig, cap: int):
    """The six funnel predicates, in canonical order."""
    return [
        ("us_english", lambda u: u.us_based and u.english),
        (
            "account_hygiene",
            lambda u: not u.verified and "bot" not in u.username.lower() and not u.reply_only,
        ),
        ("min_activity", lambda u: u.weekly_keyword_tweets >= config.min_keyword_tweets),
        ("activity_cap", lambda u: u.weekly_keyword_tweets <= cap),
        (
            "audience_band",
            lambda u: config.followers_min <= u.followers <= config.followers_max
            and config.following_min <= u.following <= config.following_max,
        ),
        ("bot_score", lambda u: u.bot_score < config.bot_score_max),
    ]


def build_cohort(candidates: Sequence[UserProfile], config: FilterConfig) -> CohortReport:
    """Apply the funnel and record survivors after each stage.

    Every excluded user is tagged with the first stage predicate it violated.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    config.validate()
    cap = resolve_activity_cap(candidates, config)

    survivors = list(candidates)
    stage_counts: list[int] = []
    reasons: dict[str, str] = {}
    for name, predicate in stage_predicates(config, cap):
        kept = []
        for user in survivors:
            if predicate(user):
                kept.append(user)
            else:
                reasons[user.user_id] = name
        survivors = kept
        stage_counts.append(len(survivors))

    return CohortReport(
        stage_names=list(STAGE_NAMES),
        stage_counts=stage_counts,
        final_ids={u.user_id for u in survivors},
        activity_cap_used=cap,
        exclusion_reasons=reasons,
    )


_USER_COLUMNS = [
    "user_id",
    "us_based",
    "english",
    "verified",
    "username",
    "followers",
    "following",
    "statuses",
    "favorites",
    "listed",
    "bot_score",
    "weekly_keyword_tweets",
    "reply_only",
]

_BOOL_FIELDS = {"us_based", "english", "verified", "reply_only"}
_INT_FIELDS = {"followers", "following", "statuses", "favorites", "listed", "weekly_keyword_tweets"}


def load_users(path: str | Path) -> list[UserProfile]:
    users: list[UserProfile] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kwargs: dict = {}
            for col in _USER_COLUMNS:
                raw = row[col].strip()
                if col in _BOOL_FIELDS:
                    kwargs[col] = raw in ("1", "true", "True")
                elif col in _INT_FIELDS:
                    kwargs[col] = int(raw)
                elif col == "bot_score":
                    kwargs[col] = float(raw)
                else:
                    kwargs[col] = raw
            users.append(UserProfile(**kwargs))
    return users


def save_users(users: Sequence[UserProfile], path: str | Path) -> None:
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_USER_COLUMNS)
        for u in users:
            writer.writerow(
                [
                    u.user_id,
                    int(u.us_based),
                    int(u.english),
                    int(u.verified),
                    u.username,
                    u.followers,
                    u.following,
                    u.statuses,
                    u.favorites,
                    u.listed,
                    f"{u.bot_score:.4f}",
                    u.weekly_keyword_tweets,
                    int(u.reply_only),
                ]
            )
