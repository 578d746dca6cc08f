"""Deterministic discrete-event platform stand-in.

Users post according to a per-user Poisson activity model, the engine scrapes
on a fixed cycle, keyword-matching posts by treatment-arm users trigger
rate-limited bot replies, and an injected ground-truth behavioral response
shifts post-period engagement propensities so the estimator has a known
target. Identical (inputs, config, seed) produce a byte-identical event log.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .assignment import TREATMENT_ARMS
from .lexicon import Lexicon, match_keywords
from .outlets import OutletRecord, select_outlet
from .replygen import GateLexicons, Generator, compose_reply, generate_reply

OUTCOMES = ("news_follows", "news_like_pct", "news_rt_pct", "pol_like_pct", "pol_rt_pct")

EVENT_SCHEMA_VERSION = 1

FILLER_TEXT = "quiet afternoon over here"
FOLLOW_SLOTS = 200
WINDOW_SIZE = 100


class SimConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    duration_days: int = 14
    scrape_interval_hours: int = 8
    reply_cooldown_hours: int = 24
    seed: int = 0
    true_effects: dict[tuple[str, str], float] = field(default_factory=dict)

    def validate(self) -> None:
        if self.duration_days <= 0:
            raise SimConfigError("duration must be positive")
        if self.scrape_interval_hours <= 0 or 24 % self.scrape_interval_hours != 0:
            raise SimConfigError("scrape interval must divide 24")
        if self.reply_cooldown_hours < self.scrape_interval_hours:
            raise SimConfigError("cooldown must be at least the scrape interval")
        for (arm, outcome) in self.true_effects:
            if outcome not in OUTCOMES:
                raise SimConfigError(f"unknown outcome {outcome!r} in true_effects")


@dataclass
class ActivityModel:
    """Per-user posting rates, topic mixture, and baseline outcome propensities.

    ``topic_mixture`` columns are (sports, entertainment, lifestyle, none) and
    each row sums to 1; ``baseline`` maps outcome name to propensities in
    [0, 1].
    """

    user_ids: list[str]
    posts_per_day: np.ndarray
    topic_mixture: np.ndarray
    baseline: dict[str, np.ndarray]

    def __post_init__(self):
        n = len(self.user_ids)
        if self.posts_per_day.shape != (n,) or np.any(self.posts_per_day < 0):
            raise SimConfigError("posts_per_day must be one non-negative rate per user")
        if self.topic_mixture.shape != (n, 4) or not np.allclose(self.topic_mixture.sum(axis=1), 1.0):
            raise SimConfigError("topic_mixture rows must sum to 1")
        for outcome in OUTCOMES:
            p = self.baseline[outcome]
            if p.shape != (n,) or np.any((p < 0) | (p > 1)):
                raise SimConfigError(f"baseline propensities for {outcome} out of [0,1]")

    def index_of(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.user_ids)}


# Calibration: with the default keyword rate, ~23% of users post no keyword
# tweet across two weeks, and keyword posts are ~13% of all posts.
DEFAULT_KEYWORD_RATE_PER_DAY = 0.105
DEFAULT_KEYWORD_SHARE = 0.132
DEFAULT_TOPIC_SPLIT = (0.7667, 0.1756, 0.0577)

DEFAULT_BASELINE_MEANS = {
    "news_follows": 0.065,   # ~13 of 200 follow slots
    "news_like_pct": 0.008,
    "news_rt_pct": 0.004,
    "pol_like_pct": 0.118,
    "pol_rt_pct": 0.105,
}


def default_activity_model(
    user_ids: Sequence[str],
    rng: np.random.Generator,
    keyword_rate_per_day: float = DEFAULT_KEYWORD_RATE_PER_DAY,
    keyword_share: float = DEFAULT_KEYWORD_SHARE,
    topic_split: Sequence[float] = DEFAULT_TOPIC_SPLIT,
    baseline_means: Mapping[str, float] | None = None,
) -> ActivityModel:
    ids = sorted(user_ids)
    n = len(ids)
    total_rate = keyword_rate_per_day / keyword_share
    # Gamma heterogeneity around the calibrated mean keeps some users quiet.
    rates = rng.gamma(shape=4.0, scale=total_rate / 4.0, size=n)
    kw_prob = keyword_rate_per_day / total_rate
    split = np.asarray(topic_split, dtype=float)
    split = split / split.sum()
    mixture = np.empty((n, 4))
    mixture[:, :3] = kw_prob * split
    mixture[:, 3] = 1.0 - kw_prob
    means = dict(DEFAULT_BASELINE_MEANS)
    if baseline_means:
        means.update(baseline_means)
    concentration = 60.0
    baseline = {
        outcome: rng.beta(mu * concentration, (1 - mu) * concentration, size=n)
        for outcome, mu in means.items()
    }
    return ActivityModel(ids, rates, mixture, baseline)


@dataclass(frozen=True)
class Event:
    kind: str
    t: float  # hours since simulation start
    user_id: str
    payload: dict

    def to_json(self) -> str:
        record = {"v": EVENT_SCHEMA_VERSION, "kind": self.kind, "t": self.t, "user": self.user_id}
        record.update(self.payload)
        return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_events(events: Sequence[Event], path: str | Path) -> None:
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json())
            fh.write("\n")


def read_events(path: str | Path) -> list[Event]:
    events = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            if record.pop("v") != EVENT_SCHEMA_VERSION:
                raise ValueError("unsupported event schema version")
            events.append(
                Event(record.pop("kind"), record.pop("t"), record.pop("user"), record)
            )
    return events


def event_log_hash(events: Sequence[Event]) -> str:
    digest = hashlib.sha256()
    for event in events:
        digest.update(event.to_json().encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def rate_limit_check(
    user_id: str, now: float, state: dict[str, float], cooldown_hours: float
) -> bool:
    """Allow iff no reply to ``user_id`` within (now - cooldown, now].

    On allow the state map is updated in the same step, so the check and the
    reservation are atomic from the caller's point of view.
    """
    last = state.get(user_id)
    if last is not None and now - last < cooldown_hours:
        return False
    state[user_id] = now
    return True


@dataclass
class ReplyBundle:
    generator: Generator
    templates: list[str]
    gate_lexicons: GateLexicons


@dataclass
class SimResult:
    events: list[Event]
    treated: dict[str, bool]
    reply_counts: dict[str, int]
    activity: ActivityModel

    @property
    def log_hash(self) -> str:
        return event_log_hash(self.events)


def run_simulation(
    assignment: Mapping[str, str],
    lexicon: Lexicon,
    outlet_records: Sequence[OutletRecord],
    bundle: ReplyBundle,
    config: SimConfig,
    activity: ActivityModel | None = None,
) -> SimResult:
    """Run the scrape/reply loop over the configured duration.

    Time advances in scrape-interval ticks; per tick every user draws new
    posts from their thinned Poisson rate, the engine scrapes, and
    keyword-matching posts by treatment-arm users trigger replies where the
    24-hour limiter allows. Control users are never replied to.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    user_ids = sorted(assignment)
    if activity is None:
        activity = default_activity_model(user_ids, rng)
    if activity.user_ids != user_ids:
        raise SimConfigError("activity model does not cover the assigned users")

    topic_names = ("sports", "entertainment", "lifestyle")
    topic_keywords = {t: lexicon.keywords_for(t) for t in topic_names}
    for t in topic_names:
        if not topic_keywords[t]:
            raise SimConfigError(f"lexicon has no {t} keywords")

    ticks = config.duration_days * 24 // config.scrape_interval_hours
    tick_hours = float(config.scrape_interval_hours)
    rate_per_tick = activity.posts_per_day * (tick_hours / 24.0)
    kw_prob = 1.0 - activity.topic_mixture[:, 3]
    topic_given_kw = activity.topic_mixture[:, :3] / np.maximum(kw_prob[:, None], 1e-300)

    events: list[Event] = []
    limiter_state: dict[str, float] = {}
    treated = {uid: False for uid in user_ids}
    reply_counts = {uid: 0 for uid in user_ids}

    for tick in range(ticks):
        now = tick * tick_hours
        counts = rng.poisson(rate_per_tick)
        pending: list[tuple[str, str, str]] = []  # (user_id, text, topic)
        active = np.nonzero(counts)[0]
        for idx in active:
            uid = user_ids[idx]
            arm = assignment[uid]
            for _ in range(int(counts[idx])):
                if rng.random() < kw_prob[idx]:
                    topic = topic_names[
                        int(rng.choice(3, p=topic_given_kw[idx]))
                    ]
                    bank = topic_keywords[topic]
                    keyword = bank[int(rng.integers(len(bank)))]
                    text = f"so much {keyword} talk on my feed today"
                else:
                    text = FILLER_TEXT
                events.append(Event("post", now, uid, {"text": text}))
                if arm in TREATMENT_ARMS:
                    matches = match_keywords(text, lexicon)
                    if matches:
                        pending.append((uid, text, matches[0][1]))

        scrape_at = now + tick_hours
        events.append(Event("scrape", scrape_at, "", {"tick": tick}))
        # Replies are merged in stable user order regardless of how the posts
        # were produced within the tick.
        for uid, text, topic in sorted(pending, key=lambda item: item[0]):
            if not rate_limit_check(uid, scrape_at, limiter_state, config.reply_cooldown_hours):
                events.append(Event("reply_suppressed", scrape_at, uid, {"reason": "cooldown"}))
                continue
            contextual, provenance = generate_reply(
                text, bundle.generator, bundle.templates, rng, bundle.gate_lexicons
            )
            outlet, url = select_outlet(topic, outlet_records, rng)
            reply = compose_reply(contextual, topic, outlet.handle, url)
            treated[uid] = True
            reply_counts[uid] += 1
            events.append(
                Event(
                    "reply_sent",
                    scrape_at,
                    uid,
                    {
                        "text": reply.full_text,
                        "topic": topic,
                        "outlet": outlet.name,
                        "provenance": provenance,
                        "trigger": text,
                    },
                )
            )

    return SimResult(events, treated, reply_counts, activity)


def behavioral_response(
    arm: str,
    treated: bool,
    baseline: Mapping[str, float] | Mapping[str, np.ndarray],
    true_effects: Mapping[tuple[str, str], float],
) -> dict:
    """Post-period propensities: baseline plus the injected effect, clamped.

    Control users and untreated users keep their baseline exactly.
    """
    shifted = {}
    for outcome in OUTCOMES:
        value = baseline[outcome]
        effect = true_effects.get((arm, outcome), 0.0)
        if arm == "control" or not treated:
            effect = 0.0
        shifted[outcome] = np.clip(np.asarray(value, dtype=float) + effect, 0.0, 1.0)
        if np.isscalar(baseline[outcome]) or np.ndim(baseline[outcome]) == 0:
            shifted[outcome] = float(shifted[outcome])
    return shifted


def post_period_propensities(
    activity: ActivityModel,
    assignment: Mapping[str, str],
    treated: Mapping[str, bool],
    true_effects: Mapping[tuple[str, str], float],
) -> dict[str, np.ndarray]:
    """Vectorized behavioral_response over the whole cohort."""
    n = len(activity.user_ids)
    shift = {outcome: np.zeros(n) for outcome in OUTCOMES}
    for i, uid in enumerate(activity.user_ids):
        arm = assignment[uid]
        if arm == "control" or not treated.get(uid, False):
            continue
        for outcome in OUTCOMES:
            shift[outcome][i] = true_effects.get((arm, outcome), 0.0)
    return {
        outcome: np.clip(activity.baseline[outcome] + shift[outcome], 0.0, 1.0)
        for outcome in OUTCOMES
    }


def sample_outcome_counts(
    rng: np.random.Generator,
    propensities: Mapping[str, np.ndarray],
    window: int = WINDOW_SIZE,
    follow_slots: int = FOLLOW_SLOTS,
) -> dict[str, np.ndarray]:
    """Draw one measurement wave of the five outcomes for every user.

    Percentage outcomes are binomial counts out of a full last-``window``
    activity window (with window=100 the count equals the percentage);
    news follows are a count out of ``follow_slots``.
    """
    out = {}
    for outcome in OUTCOMES:
        p = np.asarray(propensities[outcome], dtype=float)
        n = follow_slots if outcome == "news_follows" else window
        out[outcome] = rng.binomial(n, p).astype(float)
        if outcome != "news_follows":
            out[outcome] = 100.0 * out[outcome] / window
    return out
