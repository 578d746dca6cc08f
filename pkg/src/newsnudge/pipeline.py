"""Pipeline orchestration: staged execution, content-hash caching, manifest.

Stages run in a canonical order (cohort, assign, simulate, measure, estimate,
report), each persisting flat-file outputs into the run directory. A stage is
skipped when its input signature (config section plus upstream output hashes)
matches the manifest from a previous run, unless forced.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .assignment import ARMS, anova_balance, assign_arms
from .causal import (
    BALANCE_COVARIATES,
    EffectEstimate,
    estimate_pair,
    subgroup_estimates,
)
from .cohort import FilterConfig, build_cohort, load_users, save_users
from .lexicon import classify_user_topic, load_lexicon, default_lexicon_path
from .metrics import (
    ExclusionPolicy,
    KeywordPoliticalClassifier,
    NewsHandleList,
    WindowItem,
    apply_follow_exclusions,
    compute_delta,
    load_deltas,
    load_snapshots,
    save_deltas,
    save_snapshots,
    snapshot_engagement,
)
from .outlets import filter_eligible, load_outlets
from .replygen import GateLexicons, ReferenceGenerator, default_templates
from .simulator import (
    OUTCOMES,
    ReplyBundle,
    SimConfig,
    ActivityModel,
    post_period_propensities,
    read_events,
    run_simulation,
    write_events,
)

STAGES = ("cohort", "assign", "simulate", "measure", "estimate", "report")


class PipelineError(RuntimeError):
    pass


class StageInputMissing(PipelineError):
    def __init__(self, stage: str, needed: str):
        super().__init__(f"stage {stage!r} is missing upstream outputs: run {needed!r} first")
        self.needed = needed


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        cfg = cls(raw or {}, path.parent.resolve())
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for key in ("users",):
            if self.path(key) is None:
                raise PipelineError(f"config is missing paths.{key}")
            if not self.path(key).exists():
                raise PipelineError(f"configured file does not exist: {self.path(key)}")
        for section in ("assignment", "simulation", "measurement"):
            if "seed" not in self.raw.get(section, {}):
                raise PipelineError(f"config must set an explicit {section}.seed")

    def path(self, key: str) -> Path | None:
        value = self.raw.get("paths", {}).get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def override_seed(self, seed: int) -> None:
        for offset, section in enumerate(("assignment", "simulation", "measurement")):
            self.raw.setdefault(section, {})["seed"] = seed + offset

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, default=str)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def filter_config(self) -> FilterConfig:
        section = self.section("cohort")
        known = set(FilterConfig.__dataclass_fields__)
        return FilterConfig(**{k: v for k, v in section.items() if k in known})

    def sim_config(self) -> SimConfig:
        section = self.section("simulation")
        effects = {}
        for key, value in section.pop("true_effects", {}).items():
            arm, outcome = key.split(".", 1)
            effects[(arm, outcome)] = float(value)
        known = {"duration_days", "scrape_interval_hours", "reply_cooldown_hours", "seed"}
        kwargs = {k: v for k, v in section.items() if k in known}
        return SimConfig(true_effects=effects, **kwargs)

    def exclusion_policy(self, cap: int | None | str = "default") -> ExclusionPolicy:
        section = self.section("exclusion")
        if cap == "default":
            cap = section.get("absolute_cap", 200)
        if cap in ("none", None):
            cap = None
        return ExclusionPolicy(
            rel_decrease=section.get("rel_decrease", 0.20),
            rel_increase=section.get("rel_increase", 0.50),
            absolute_cap=cap,
        )

    def exclusion_variants(self) -> list[int | None]:
        raw = self.section("exclusion").get("variants", [200, 500, "none"])
        return [None if v in ("none", None) else int(v) for v in raw]


def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class StageRecord:
    signature: str
    outputs: dict[str, str]
    seconds: float


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = __version__
    stages: dict[str, StageRecord] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "tool_version": self.tool_version,
                "stages": {
                    name: {
                        "signature": rec.signature,
                        "outputs": rec.outputs,
                        "seconds": rec.seconds,
                    }
                    for name, rec in self.stages.items()
                },
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        data = json.loads(path.read_text(encoding="utf-8"))
        manifest = cls(data["config_hash"], data.get("tool_version", ""))
        for name, rec in data.get("stages", {}).items():
            manifest.stages[name] = StageRecord(
                rec["signature"], dict(rec["outputs"]), rec["seconds"]
            )
        return manifest


class RunLock:
    """Exclusive ownership of a run directory via an O_EXCL lockfile."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(f"run directory is locked: {self.path}") from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _load_shared(config: ExperimentConfig):
    lexicon = load_lexicon(config.path("lexicon") or default_lexicon_path())
    outlets = filter_eligible(load_outlets(config.path("outlets")))
    handles = NewsHandleList.load(config.path("handles"))
    templates_path = config.path("templates")
    templates = (
        [line for line in templates_path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if templates_path
        else default_templates()
    )
    bundle = ReplyBundle(ReferenceGenerator(), templates, GateLexicons.default())
    return lexicon, outlets, handles, bundle


# --- stage bodies -----------------------------------------------------------


def _stage_cohort(config: ExperimentConfig, out: Path) -> list[Path]:
    users = load_users(config.path("users"))
    report = build_cohort(users, config.filter_config())
    survivors = [u for u in users if u.user_id in report.final_ids]
    cohort_csv = out / "cohort.csv"
    report_json = out / "cohort_report.json"
    save_users(survivors, cohort_csv)
    report_json.write_text(report.to_json() + "\n", encoding="utf-8")
    return [cohort_csv, report_json]


def _stage_assign(config: ExperimentConfig, out: Path) -> list[Path]:
    cohort_csv = out / "cohort.csv"
    if not cohort_csv.exists():
        raise StageInputMissing("assign", "cohort")
    users = load_users(cohort_csv)
    section = config.section("assignment")
    arms = assign_arms(
        [u.user_id for u in users],
        seed=int(section["seed"]),
        proportions=section.get("proportions", (1.0, 1.0, 1.0)),
    )
    assignment_csv = out / "assignment.csv"
    with assignment_csv.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "arm"])
        for uid in sorted(arms):
            writer.writerow([uid, arms[uid]])

    balance_csv = out / "balance_account.csv"
    metrics = {"listed": "listed", "favorites": "favorites", "statuses": "statuses",
               "following": "following", "followers": "followers"}
    rows = []
    anova_row = ["ANOVA"]
    for label, attr in metrics.items():
        groups = {
            arm: [getattr(u, attr) for u in users if arms[u.user_id] == arm]
            for arm in ARMS
        }
        report = anova_balance(groups, metric_name=label)
        rows.append((label, report))
        anova_row.append(f"{report.p_value:.4f}")
    with balance_csv.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["treatment"] + list(metrics))
        for arm in ARMS:
            writer.writerow([arm] + [f"{rep.group_means[arm]:.4f}" for _, rep in rows])
        writer.writerow(anova_row)
    return [assignment_csv, balance_csv]


def _read_assignment(out: Path, stage: str) -> dict[str, str]:
    path = out / "assignment.csv"
    if not path.exists():
        raise StageInputMissing(stage, "assign")
    with path.open(newline="", encoding="utf-8") as fh:
        return {row["user_id"]: row["arm"] for row in csv.DictReader(fh)}


def _stage_simulate(config: ExperimentConfig, out: Path) -> list[Path]:
    arms = _read_assignment(out, "simulate")
    lexicon, outlets, _, bundle = _load_shared(config)
    sim_config = config.sim_config()
    result = run_simulation(arms, lexicon, outlets, bundle, sim_config)

    events_path = out / "events.jsonl"
    write_events(result.events, events_path)

    treated_csv = out / "treated.csv"
    with treated_csv.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "arm", "treated", "replies"])
        for uid in result.activity.user_ids:
            writer.writerow([uid, arms[uid], int(result.treated[uid]), result.reply_counts[uid]])

    baselines_csv = out / "baselines.csv"
    with baselines_csv.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id"] + list(OUTCOMES))
        for i, uid in enumerate(result.activity.user_ids):
            writer.writerow(
                [uid] + [f"{result.activity.baseline[o][i]:.8f}" for o in OUTCOMES]
            )

    posts = sum(1 for e in result.events if e.kind == "post")
    replies = sum(1 for e in result.events if e.kind == "reply_sent")
    summary = {
        "posts": posts,
        "replies": replies,
        "treated_users": sum(result.treated.values()),
        "log_hash": result.log_hash,
    }
    summary_path = out / "sim_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [events_path, treated_csv, baselines_csv, summary_path]


def _stage_measure(config: ExperimentConfig, out: Path) -> list[Path]:
    treated_csv = out / "treated.csv"
    baselines_csv = out / "baselines.csv"
    events_path = out / "events.jsonl"
    for p in (treated_csv, baselines_csv, events_path):
        if not p.exists():
            raise StageInputMissing("measure", "simulate")
    arms = _read_assignment(out, "measure")
    lexicon, _, handles, _ = _load_shared(config)
    classifier = KeywordPoliticalClassifier()

    with treated_csv.open(newline="", encoding="utf-8") as fh:
        treated_rows = list(csv.DictReader(fh))
    user_ids = [r["user_id"] for r in treated_rows]
    treated = {r["user_id"]: r["treated"] == "1" for r in treated_rows}

    baseline = {o: np.zeros(len(user_ids)) for o in OUTCOMES}
    with baselines_csv.open(newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            for o in OUTCOMES:
                baseline[o][i] = float(row[o])
    activity_stub = {"user_ids": user_ids, "baseline": baseline}

    posts_by_user: dict[str, list[str]] = {}
    for event in read_events(events_path):
        if event.kind == "post":
            posts_by_user.setdefault(event.user_id, []).append(event.payload["text"])

    sim_config = config.sim_config()
    post_prop = {
        o: np.clip(
            baseline[o]
            + np.array(
                [
                    sim_config.true_effects.get((arms[uid], o), 0.0)
                    if treated[uid] and arms[uid] != "control"
                    else 0.0
                    for uid in user_ids
                ]
            ),
            0.0,
            1.0,
        )
        for o in OUTCOMES
    }

    section = config.section("measurement")
    rng = np.random.default_rng(int(section["seed"]))
    window = int(section.get("window", 100))
    empty_window_rate = float(section.get("empty_window_rate", 0.02))

    news_ids = sorted(handles.ids)
    political_text = "another big election policy debate tonight"
    plain_text = "coffee and a long walk this morning"

    # Non-news follow totals are correlated across waves so the follow-change
    # plausibility band and absolute caps each bind for some users.
    extra_pre = rng.integers(60, 2000, size=len(user_ids))
    extra_delta = rng.integers(-400, 700, size=len(user_ids))
    extra_by_wave = {"pre": extra_pre, "post": np.maximum(extra_pre + extra_delta, 0)}

    def wave(prop: dict[str, np.ndarray], which: str):
        snapshots = []
        for i, uid in enumerate(user_ids):
            likes_n = 0 if rng.random() < empty_window_rate else window
            tweets_n = 0 if rng.random() < empty_window_rate else window
            likes = _sample_items(
                rng, likes_n, prop["news_like_pct"][i], prop["pol_like_pct"][i],
                news_ids, political_text, plain_text,
            )
            tweets = _sample_items(
                rng, tweets_n, prop["news_rt_pct"][i], prop["pol_rt_pct"][i],
                news_ids, political_text, plain_text,
            )
            n_follow = min(int(rng.binomial(200, prop["news_follows"][i])), len(news_ids))
            followed = set(rng.choice(news_ids, size=n_follow, replace=False)) if n_follow else set()
            followed |= {f"acct-{uid}-{j}" for j in range(int(extra_by_wave[which][i]))}
            snapshots.append(
                snapshot_engagement(uid, likes, tweets, followed, handles, classifier)
            )
        return snapshots

    pre = wave(baseline, "pre")
    post = wave(post_prop, "post")
    pre_csv, post_csv = out / "snapshots_pre.csv", out / "snapshots_post.csv"
    save_snapshots(pre, pre_csv)
    save_snapshots(post, post_csv)

    records = []
    for s_pre, s_post, uid in zip(pre, post, user_ids):
        record = compute_delta(s_pre, s_post, arm=arms[uid], treated=treated[uid])
        if uid in posts_by_user:
            record.topic = classify_user_topic(posts_by_user[uid], lexicon)
        records.append(record)
    deltas_csv = out / "deltas.csv"
    save_deltas(records, deltas_csv)
    return [pre_csv, post_csv, deltas_csv]


def _sample_items(rng, n, news_p, pol_p, news_ids, political_text, plain_text):
    if n == 0:
        return []
    is_news = rng.random(n) < news_p
    is_pol = rng.random(n) < pol_p
    items = []
    for j in range(n):
        author = news_ids[int(rng.integers(len(news_ids)))] if is_news[j] else f"user-{int(rng.integers(1_000_000))}"
        items.append(WindowItem(author, political_text if is_pol[j] else plain_text))
    return items


def _stage_estimate(config: ExperimentConfig, out: Path) -> list[Path]:
    deltas_csv = out / "deltas.csv"
    cohort_csv = out / "cohort.csv"
    if not deltas_csv.exists():
        raise StageInputMissing("estimate", "measure")
    if not cohort_csv.exists():
        raise StageInputMissing("estimate", "cohort")
    records = load_deltas(deltas_csv)
    users = load_users(cohort_csv)
    covariates = {
        u.user_id: np.array([u.favorites, u.statuses, u.followers, u.following], dtype=float)
        for u in users
    }

    section = config.section("estimation")
    estimands = section.get("estimands", ["ITT", "Treated"])
    hc_variant = section.get("hc_variant", "HC0")
    pairs = ("female", "male", "combined")

    default_policy = config.exclusion_policy()
    estimates: list[EffectEstimate] = []
    for estimand in estimands:
        for pair in pairs:
            for outcome in OUTCOMES:
                subset = (
                    apply_follow_exclusions(records, default_policy)
                    if outcome == "news_follows"
                    else records
                )
                estimates.append(
                    estimate_pair(subset, covariates, pair, outcome, estimand, hc_variant)
                )

    variants = []
    for cap in config.exclusion_variants():
        policy = config.exclusion_policy(cap)
        subset = apply_follow_exclusions(records, policy)
        for estimand in estimands:
            for pair in ("female", "male"):
                est = estimate_pair(subset, covariates, pair, "news_follows", estimand, hc_variant)
                variants.append((policy.label, est))

    subgroups = {}
    for split in section.get("subgroup_splits", ["political_engagement", "topic"]):
        by_label = {}
        for estimand in estimands:
            result = subgroup_estimates(records, covariates, split, estimand, OUTCOMES)
            for label, ests in result.items():
                by_label.setdefault(label, []).extend(ests)
        subgroups[split] = by_label

    effects_json = out / "effects.json"
    payload = {
        "primary": [e.to_dict() for e in estimates],
        "exclusion_variants": [
            {"cap": label, **est.to_dict()} for label, est in variants
        ],
        "subgroups": {
            split: {label: [e.to_dict() for e in ests] for label, ests in by_label.items()}
            for split, by_label in subgroups.items()
        },
    }
    effects_json.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    effects_csv = out / "effects.csv"
    with effects_csv.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["estimand", "pair", "outcome", "coef", "se", "p_value", "n", "available"])
        for e in estimates:
            writer.writerow(
                [e.estimand, e.pair, e.outcome, f"{e.coef:.6f}", f"{e.se:.6f}",
                 f"{e.p_value:.6f}", e.n, int(e.available)]
            )
    return [effects_json, effects_csv]


def _stage_report(config: ExperimentConfig, out: Path) -> list[Path]:
    from .report import emit_report

    effects_json = out / "effects.json"
    if not effects_json.exists():
        raise StageInputMissing("report", "estimate")
    return emit_report(config, out)


_STAGE_BODIES = {
    "cohort": _stage_cohort,
    "assign": _stage_assign,
    "simulate": _stage_simulate,
    "measure": _stage_measure,
    "estimate": _stage_estimate,
    "report": _stage_report,
}

_STAGE_DEPS = {
    "cohort": [],
    "assign": ["cohort"],
    "simulate": ["assign"],
    "measure": ["simulate"],
    "estimate": ["measure", "cohort"],
    "report": ["estimate", "assign"],
}

_STAGE_CONFIG_SECTIONS = {
    "cohort": ["paths", "cohort"],
    "assign": ["assignment"],
    "simulate": ["paths", "simulation"],
    "measure": ["paths", "simulation", "measurement"],
    "estimate": ["exclusion", "estimation"],
    "report": ["report", "exclusion", "estimation"],
}


def _stage_signature(config: ExperimentConfig, manifest: RunManifest, stage: str) -> str:
    parts = {
        "config": {s: config.raw.get(s) for s in _STAGE_CONFIG_SECTIONS[stage]},
        "inputs": {},
    }
    if stage == "cohort":
        parts["inputs"]["users"] = file_hash(config.path("users"))
    for dep in _STAGE_DEPS[stage]:
        rec = manifest.stages.get(dep)
        parts["inputs"][dep] = rec.outputs if rec else None
    return hashlib.sha256(
        json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def run_pipeline(
    config: ExperimentConfig,
    out_dir: str | Path,
    stages: Sequence[str] | None = None,
    force: bool = False,
) -> RunManifest:
    """Execute the requested stages in canonical order, skipping stages whose
    inputs are unchanged since the recorded run."""
    requested = list(stages) if stages else list(STAGES)
    unknown = set(requested) - set(STAGES)
    if unknown:
        raise PipelineError(f"unknown stages {sorted(unknown)}")
    ordered = [s for s in STAGES if s in requested]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = (
        RunManifest.load(manifest_path)
        if manifest_path.exists()
        else RunManifest(config.config_hash())
    )
    manifest.config_hash = config.config_hash()
    manifest.tool_version = __version__

    with RunLock(out):
        for stage in ordered:
            signature = _stage_signature(config, manifest, stage)
            previous = manifest.stages.get(stage)
            if (
                not force
                and previous
                and previous.signature == signature
                and all(
                    (out / name).exists() and file_hash(out / name) == digest
                    for name, digest in previous.outputs.items()
                )
            ):
                continue
            start = time.perf_counter()
            outputs = _STAGE_BODIES[stage](config, out)
            elapsed = time.perf_counter() - start
            manifest.stages[stage] = StageRecord(
                signature=signature,
                outputs={p.name: file_hash(p) for p in outputs},
                seconds=round(elapsed, 4),
            )
            manifest_path.write_text(manifest.to_json() + "\n", encoding="utf-8")
    manifest_path.write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest
