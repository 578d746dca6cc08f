"""Acceptance suite: one test per release criterion, one pass line each.

Run with ``pytest tests/test_acceptance.py -v`` to see the per-criterion
verdicts; each test also prints a ``PASS`` line on success.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from newsnudge.assignment import anova_balance, assign_arms
from newsnudge.causal import (
    adjusted_mean_diff,
    entropy_balance,
    estimate_pair,
    g_compute_effect,
)
from newsnudge.cohort import FilterConfig, build_cohort
from newsnudge.demo import write_demo
from newsnudge.lexicon import default_lexicon_path, load_lexicon
from newsnudge.metrics import DeltaRecord, ExclusionPolicy, follow_change_allowed
from newsnudge.outlets import filter_eligible, load_outlets, select_outlet
from newsnudge.pipeline import ExperimentConfig, run_pipeline
from newsnudge.replygen import (
    GateLexicons,
    ReferenceGenerator,
    aggregate_sentiment,
    apply_quality_gates,
    audit_majority_vote,
    compose_reply,
    default_templates,
    generate_reply,
    sanitize_input,
)
from newsnudge.simulator import (
    ReplyBundle,
    SimConfig,
    post_period_propensities,
    run_simulation,
    sample_outcome_counts,
)

DATA = Path(__file__).parent / "data"


def ok(n, message):
    print(f"PASS criterion {n}: {message}")


def test_criterion_01_majority_vote_audit():
    with (DATA / "annotations_500x5.csv").open(newline="") as fh:
        matrix = [row for row in csv.reader(fh) if row]
    assert len(matrix) == 500
    sat, unsat, rate = audit_majority_vote(matrix)
    assert (sat, unsat) == (407, 93)
    assert round(100 * rate, 1) == 81.4
    ok(1, "500x5 annotation fixture gives exactly 407/93 = 81.4%")


def test_criterion_02_sentiment_aggregation():
    labels = (
        [("male", "positive")] * 18 + [("male", "negative")] * 49 + [("male", "neutral")] * 32
        + [("female", "positive")] * 21 + [("female", "negative")] * 65 + [("female", "neutral")] * 56
    )
    assert len(labels) == 241
    table = aggregate_sentiment(labels)
    stated = {
        "male": {"positive": 18.18, "negative": 49.49, "neutral": 32.32},
        "female": {"positive": 14.78, "negative": 45.77, "neutral": 39.44},
    }
    for gender, row in stated.items():
        for sentiment, pct in row.items():
            got = table[gender][sentiment][1]
            # 21/142 is 14.7887%, which rounds to 14.79; the stated 14.78 is
            # reachable only by truncation, so that one cell gets a wider bound.
            assert got == pytest.approx(pct, abs=0.011)
            if not (gender == "female" and sentiment == "positive"):
                assert got == pct
    ok(2, "241-label fixture reproduces the per-gender sentiment table to 2 decimals")


def test_criterion_03_outlet_eligibility():
    records = load_outlets()
    assert len(records) == 24
    eligible = filter_eligible(records)
    assert eligible == records
    no_sports = {"Vice", "Vox", "Buzzfeed News", "MarketWatch", "NPR", "Forbes"}
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        record, url = select_outlet("sports", eligible, rng)
        assert record.name not in no_sports
        assert url == record.sections["sports"]
    ok(3, "all 24 outlets eligible; 10,000 sports draws avoid the six sports-less outlets")


def test_criterion_04_reply_composition():
    reply = compose_reply(
        "I think college basketball is better.",
        "sports",
        "@nytimes",
        "https://www.nytimes.com/section/sports",
    )
    expected = (
        "I think college basketball is better. To learn more about sports click "
        "https://www.nytimes.com/section/sports and follow @nytimes."
    )
    assert reply.full_text == expected
    ok(4, "reference reply composed byte-for-byte")


def test_criterion_05_entropy_balancing():
    # (a) one-covariate three-point instance against a bisection oracle
    c = np.array([[0.0], [1.0], [2.0]])
    target = 0.7
    w = entropy_balance(c, [target], tol=1e-12)
    assert abs(w @ c[:, 0] - target) <= 1e-10

    values = c[:, 0]

    def weighted_mean(lam):
        t = np.exp(lam * (values - values.max()))
        t = t / t.sum()
        return t @ values, t

    lo, hi = -100.0, 100.0
    for _ in range(300):
        mid = (lo + hi) / 2
        mean, oracle = weighted_mean(mid)
        if mean < target:
            lo = mid
        else:
            hi = mid
    assert np.allclose(w, oracle, atol=1e-8)

    # (b) 2,000 x 4 imbalanced treated group
    rng = np.random.default_rng(77)
    treated = np.column_stack(
        [
            rng.lognormal(8.0, 1.0, 2000),   # favorites
            rng.lognormal(8.5, 1.2, 2000),   # statuses
            rng.lognormal(6.5, 0.9, 2000),   # followers
            rng.lognormal(6.0, 0.7, 2000),   # following
        ]
    )
    control_means = treated.mean(axis=0) * np.array([0.8, 1.15, 0.85, 1.1])
    before = np.abs(treated.mean(axis=0) - control_means) / treated.std(axis=0, ddof=1)
    assert np.max(before) > 0.01  # genuinely imbalanced to start
    weights = entropy_balance(treated, control_means)
    after = adjusted_mean_diff(weights, treated, control_means)
    assert np.max(after) <= 1e-6
    ok(5, "3-point oracle match and 2,000x4 post-weighting diffs <= 1e-6")


def test_criterion_06_g_computation_identity():
    rng = np.random.default_rng(88)
    for _ in range(100):
        n = int(rng.integers(6, 80))
        t = (rng.random(n) < 0.5).astype(float)
        if t.sum() in (0, n):
            t[0], t[-1] = 0.0, 1.0
        y = rng.normal(size=n)
        w = rng.dirichlet(np.ones(n))
        est = g_compute_effect(y, t, w)
        oracle = (w[t == 1] @ y[t == 1]) / w[t == 1].sum() - (w[t == 0] @ y[t == 0]) / w[t == 0].sum()
        assert abs(est.coef - oracle) <= 1e-12

    y = np.array([0.0, 1.0, 0.0, 2.0])
    t = np.array([0.0, 0.0, 1.0, 1.0])
    est = g_compute_effect(y, t, np.full(4, 0.25))
    assert abs(est.se - np.sqrt(0.625)) <= 1e-10
    ok(6, "coef equals weighted diff-in-means on 100 instances; 4-point sandwich matches by hand")


@pytest.fixture(scope="module")
def shared_world():
    lexicon = load_lexicon(default_lexicon_path())
    outlets = filter_eligible(load_outlets())
    bundle = ReplyBundle(ReferenceGenerator(), default_templates(), GateLexicons.default())
    return lexicon, outlets, bundle


def test_criterion_07_effect_recovery(shared_world):
    lexicon, outlets, bundle = shared_world
    delta = 0.004
    effects = {("female_bot", "news_like_pct"): delta}
    user_ids = [f"u{i:05d}" for i in range(2000)]
    cov_rng = np.random.default_rng(1000)
    covariates = {
        uid: np.exp(cov_rng.normal([7.5, 8.0, 6.5, 6.0], 0.8)) for uid in user_ids
    }

    runs = 200
    covered = 0
    null_tests = 0
    null_rejections = 0
    start = time.perf_counter()
    for run_idx in range(runs):
        arms = assign_arms(user_ids, seed=run_idx)
        config = SimConfig(seed=10_000 + run_idx, true_effects=effects)
        sim = run_simulation(arms, lexicon, outlets, bundle, config)
        post = post_period_propensities(sim.activity, arms, sim.treated, effects)
        wave_rng = np.random.default_rng(50_000 + run_idx)
        pre_wave = sample_outcome_counts(wave_rng, sim.activity.baseline)
        post_wave = sample_outcome_counts(wave_rng, post)
        records = [
            DeltaRecord(
                user_id=uid,
                arm=arms[uid],
                treated=sim.treated[uid],
                deltas={
                    o: float(post_wave[o][i] - pre_wave[o][i])
                    for o in ("news_like_pct", "news_rt_pct")
                },
                follow_total_pre=100,
                follow_total_post=100,
            )
            for i, uid in enumerate(sim.activity.user_ids)
        ]
        est = estimate_pair(records, covariates, "female", "news_like_pct", "Treated")
        assert est.available
        implied = 100.0 * delta / est.outcome_sd
        lo, hi = est.ci95()
        if lo <= implied <= hi:
            covered += 1
        for null_est in (
            estimate_pair(records, covariates, "female", "news_rt_pct", "Treated"),
            estimate_pair(records, covariates, "male", "news_like_pct", "Treated"),
        ):
            assert null_est.available
            null_tests += 1
            if null_est.p_value < 0.05:
                null_rejections += 1
    elapsed = time.perf_counter() - start

    coverage = covered / runs
    null_rate = null_rejections / null_tests
    assert coverage >= 0.90, f"coverage {coverage:.3f}"
    assert null_rate <= 0.10, f"null rejection rate {null_rate:.3f}"
    assert elapsed < 600.0
    ok(7, f"coverage {coverage:.1%}, null rejection {null_rate:.1%}, {elapsed:.0f}s for 200 runs")


def test_criterion_08_rate_limiter_invariant(shared_world):
    lexicon, outlets, bundle = shared_world
    rng = np.random.default_rng(4242)
    start = time.perf_counter()
    for trial in range(1000):
        n_users = int(rng.integers(6, 25))
        arms = assign_arms([f"u{i}" for i in range(n_users)], seed=int(rng.integers(1 << 30)))
        config = SimConfig(
            duration_days=int(rng.integers(1, 4)),
            scrape_interval_hours=int(rng.choice([6, 8, 12, 24])),
            reply_cooldown_hours=int(rng.choice([24, 32, 48])),
            seed=int(rng.integers(1 << 30)),
        )
        sim = run_simulation(arms, lexicon, outlets, bundle, config)
        last = {}
        for event in sim.events:
            if event.kind != "reply_sent":
                continue
            assert arms[event.user_id] != "control"
            if event.user_id in last:
                gap = event.t - last[event.user_id]
                assert gap >= config.reply_cooldown_hours
                assert gap >= 24.0
            last[event.user_id] = event.t
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    ok(8, f"1,000 fuzzed logs keep the cooldown and never reply to control ({elapsed:.0f}s)")


def test_criterion_09_quality_gates():
    lexicons = GateLexicons.default()
    profane = sorted(lexicons.profanity)
    platform = sorted(lexicons.platform_terms)
    clean_bases = [
        f"what a great {noun} for local basketball fans volume {i}"
        for i, noun in enumerate(["evening", "afternoon", "weekend", "series", "season"] * 10)
    ]
    fixture = []
    for i in range(50):
        inp = f"the nba finals game {i} was incredible tonight"
        fixture.append((sanitize_input(inp), sanitize_input(inp), "echo"))
    for i in range(50):
        fixture.append((f"honestly that call was {profane[i % len(profane)]} tonight", "input text", "profanity"))
    for i in range(50):
        fixture.append((f"someone should post this on the {platform[i % len(platform)]} page", "input text", "platform_terms"))
    for base in clean_bases:
        fixture.append((base, "completely unrelated source material", None))
    assert len(fixture) == 200

    for draft, cleaned, expected_gate in fixture:
        verdict = apply_quality_gates(draft, cleaned, lexicons)
        if expected_gate is None:
            assert verdict.passed, draft
        else:
            assert verdict.failed_gate == expected_gate, draft

    # Generated provenance always re-passes the gates.
    rng = np.random.default_rng(9)
    templates = default_templates()
    generator = ReferenceGenerator()
    for i in range(100):
        raw = f"big {['nba', 'yoga', 'oscars'][i % 3]} conversation number {i} today"
        text, provenance = generate_reply(raw, generator, templates, rng, lexicons)
        if provenance == "generated":
            assert apply_quality_gates(text, sanitize_input(raw), lexicons).passed
    ok(9, "200-draft fixture: 150/150 planted violations caught, 50/50 clean pass")


def _random_users(rng):
    from newsnudge.cohort import UserProfile

    n = int(rng.integers(3, 30))
    return [
        UserProfile(
            user_id=f"u{i}",
            us_based=bool(rng.random() < 0.8),
            english=bool(rng.random() < 0.9),
            verified=bool(rng.random() < 0.2),
            username=f"name{i}" + ("bot" if rng.random() < 0.1 else ""),
            followers=int(rng.integers(0, 20000)),
            following=int(rng.integers(0, 6000)),
            statuses=int(rng.integers(0, 50000)),
            favorites=int(rng.integers(0, 50000)),
            listed=int(rng.integers(0, 50)),
            bot_score=float(rng.random()),
            weekly_keyword_tweets=int(rng.integers(0, 60)),
            reply_only=bool(rng.random() < 0.1),
        )
        for i in range(n)
    ]


def test_criterion_10_funnel_and_exclusion_monotonicity():
    rng = np.random.default_rng(31337)
    for _ in range(1000):
        users = _random_users(rng)
        report = build_cohort(users, FilterConfig(activity_cap=int(rng.integers(5, 40))))
        counts = [len(users)] + report.stage_counts
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert report.final_ids <= {u.user_id for u in users}

    for _ in range(1000):
        n = int(rng.integers(1, 30))
        records = [
            DeltaRecord(
                user_id=str(i), arm="control", treated=False, deltas={},
                follow_total_pre=int(rng.integers(0, 3000)),
                follow_total_post=int(rng.integers(0, 3000)),
            )
            for i in range(n)
        ]
        kept = {}
        for cap in (200, 500, None):
            policy = ExclusionPolicy(absolute_cap=cap)
            kept[policy.label] = {
                r.user_id for r in records if follow_change_allowed(r, policy)[0]
            }
        assert kept["200"] <= kept["500"] <= kept["none"]
    ok(10, "funnel subset-monotone and exclusion policies nest on 1,000 fuzzed inputs each")


def test_criterion_11_anova_oracle():
    import math

    from scipy import integrate

    def quadrature_tail(f_stat, df1, df2):
        log_b = math.lgamma(df1 / 2) + math.lgamma(df2 / 2) - math.lgamma((df1 + df2) / 2)

        def pdf(x):
            return math.exp(
                (df1 / 2) * math.log(df1 / df2)
                + (df1 / 2 - 1) * math.log(x)
                - ((df1 + df2) / 2) * math.log1p(df1 * x / df2)
                - log_b
            )

        cdf, _ = integrate.quad(pdf, 0.0, f_stat, limit=200)
        return 1.0 - cdf

    rng = np.random.default_rng(55)
    for _ in range(50):
        k = int(rng.integers(2, 5))
        groups = {
            f"g{j}": rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2.0), size=int(rng.integers(3, 15))).tolist()
            for j in range(k)
        }
        report = anova_balance(groups)
        n = sum(len(v) for v in groups.values())
        # Recompute F independently from sums of squares.
        sample = [np.asarray(v) for v in groups.values()]
        grand = np.concatenate(sample).mean()
        ssb = sum(v.size * (v.mean() - grand) ** 2 for v in sample)
        ssw = sum(((v - v.mean()) ** 2).sum() for v in sample)
        f_oracle = (ssb / (k - 1)) / (ssw / (n - k))
        assert report.f_stat == pytest.approx(f_oracle, abs=1e-8, rel=1e-8)
        assert report.p_value == pytest.approx(quadrature_tail(report.f_stat, k - 1, n - k), abs=1e-8)

    identical = anova_balance({"a": [1.0, 2.0, 3.0], "b": [1.0, 2.0, 3.0]})
    assert (identical.f_stat, identical.p_value) == (0.0, 1.0)
    ok(11, "F and p match the quadrature oracle to 1e-8 on 50 instances; identical groups give F=0, p=1")


def test_criterion_12_pipeline_determinism(tmp_path):
    inputs = tmp_path / "inputs"
    config_path = write_demo(inputs)
    outputs = {}
    for label in ("first", "second"):
        out = tmp_path / label
        run_pipeline(ExperimentConfig.load(config_path), out)
        outputs[label] = {
            p.name: p.read_bytes()
            for p in sorted(out.iterdir())
            if p.name.startswith("report") or p.suffix in (".csv", ".jsonl")
        }
    assert outputs["first"].keys() == outputs["second"].keys()
    for name in outputs["first"]:
        assert outputs["first"][name] == outputs["second"][name], f"{name} differs"
    ok(12, "two identical demo runs produce byte-identical reports and tables")
