import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from newsnudge.causal import (
    BALANCE_COVARIATES,
    ConvergenceError,
    EstimationError,
    adjusted_mean_diff,
    entropy_balance,
    estimate_pair,
    g_compute_effect,
    political_engagement_label,
    standardize,
    subgroup_estimates,
)
from newsnudge.metrics import DeltaRecord
from newsnudge.simulator import OUTCOMES


def scalar_balance_oracle(c, target, tol=1e-12):
    """Bisection on the 1-D dual: find lambda with weighted mean = target,
    where w(lambda) is proportional to exp(lambda * c)."""
    c = np.asarray(c, dtype=float)

    def weighted_mean(lam):
        w = np.exp(lam * (c - c.max()))
        w = w / w.sum()
        return w @ c, w

    lo, hi = -200.0, 200.0
    for _ in range(200):
        mid = (lo + hi) / 2
        mean, w = weighted_mean(mid)
        if abs(mean - target) < tol:
            return w
        if mean < target:
            lo = mid
        else:
            hi = mid
    return weighted_mean((lo + hi) / 2)[1]


class TestStandardize:
    def test_basic(self):
        z, mean, sd = standardize([1.0, 2.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert sd == pytest.approx(1.0)
        assert z.mean() == pytest.approx(0.0, abs=1e-12)
        assert z.std(ddof=1) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(EstimationError):
            standardize([2.0, 2.0, 2.0])
        with pytest.raises(EstimationError):
            standardize([1.0])


class TestEntropyBalance:
    def test_three_point_instance_vs_bisection_oracle(self):
        c = np.array([[0.0], [1.0], [2.0]])
        target = [0.7]
        w = entropy_balance(c, target, tol=1e-12)
        assert abs(w @ c[:, 0] - 0.7) <= 1e-10
        oracle = scalar_balance_oracle(c[:, 0], 0.7)
        assert np.allclose(w, oracle, atol=1e-8)

    def test_weights_are_a_distribution(self):
        rng = np.random.default_rng(0)
        c = rng.normal(size=(50, 3))
        target = c.mean(axis=0) + 0.1
        w = entropy_balance(c, target)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w > 0)

    def test_already_balanced_gives_uniform(self):
        rng = np.random.default_rng(1)
        c = rng.normal(size=(30, 2))
        w = entropy_balance(c, c.mean(axis=0))
        assert np.allclose(w, 1.0 / 30, atol=1e-6)

    def test_infeasible_target_raises(self):
        c = np.array([[0.0], [1.0], [2.0]])
        with pytest.raises(ConvergenceError):
            entropy_balance(c, [5.0])

    def test_constant_column_must_match(self):
        c = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        w = entropy_balance(c, [1.0, 0.7])
        assert abs(w @ c[:, 1] - 0.7) <= 1e-8
        with pytest.raises(ConvergenceError):
            entropy_balance(c, [2.0, 0.7])

    def test_shape_errors(self):
        with pytest.raises(EstimationError):
            entropy_balance(np.zeros((5, 2)), [0.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_feasible_instances_converge(self, seed):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(10, 80)), int(rng.integers(1, 5))
        c = rng.normal(size=(n, k)) * rng.uniform(0.5, 20.0, size=k)
        # A convex combination of the rows is always a feasible target.
        mix = rng.dirichlet(np.ones(n) * 0.5)
        target = mix @ c
        w = entropy_balance(c, target)
        cs_sd = c.std(axis=0, ddof=1)
        achieved = np.abs(w @ c - target) / np.where(cs_sd > 0, cs_sd, 1.0)
        assert np.max(achieved) <= 1e-7


class TestAdjustedMeanDiff:
    def test_zero_after_balancing(self):
        rng = np.random.default_rng(2)
        source = rng.normal(1.0, 2.0, size=(200, 4))
        target = source.mean(axis=0) + np.array([0.5, -0.3, 0.2, 0.1])
        w = entropy_balance(source, target)
        diffs = adjusted_mean_diff(w, source, target)
        assert np.max(diffs) <= 1e-6

    def test_unweighted_gap(self):
        source = np.array([[0.0], [2.0]])
        w = np.array([0.5, 0.5])
        diffs = adjusted_mean_diff(w, source, [3.0])
        sd = np.std([0.0, 2.0], ddof=1)
        assert diffs[0] == pytest.approx(2.0 / sd)

    def test_pooled_scale_with_target_matrix(self):
        source = np.array([[0.0], [2.0]])
        target_matrix = np.array([[0.0], [4.0]])
        w = np.array([0.5, 0.5])
        diffs = adjusted_mean_diff(w, source, [2.0], target_matrix)
        pooled = np.sqrt((2.0 + 8.0) / 2.0)
        assert diffs[0] == pytest.approx(1.0 / pooled)


class TestGComputation:
    def test_identity_with_diff_in_means(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(6, 60))
            t = (rng.random(n) < 0.5).astype(float)
            if t.sum() in (0, n):
                t[0], t[-1] = 0.0, 1.0
            y = rng.normal(size=n)
            w = rng.dirichlet(np.ones(n))
            est = g_compute_effect(y, t, w)
            oracle = (w[t == 1] @ y[t == 1]) / w[t == 1].sum() - (
                (w[t == 0] @ y[t == 0]) / w[t == 0].sum()
            )
            assert est.coef == pytest.approx(oracle, abs=1e-12)

    def test_four_point_sandwich_hand_computation(self):
        """y = (0,1,0,2), t = (0,0,1,1), uniform weights 1/4.

        By hand: coef = 1.0 - 0.5 = 0.5. bread = [[2,-2],[-2,4]],
        residuals = (-1/2, 1/2, -1, 1), meat = [[0.15625, 0.125],
        [0.125, 0.125]], vcov[1,1] = 0.625.
        """
        y = np.array([0.0, 1.0, 0.0, 2.0])
        t = np.array([0.0, 0.0, 1.0, 1.0])
        w = np.full(4, 0.25)
        est = g_compute_effect(y, t, w)
        assert est.coef == pytest.approx(0.5, abs=1e-12)
        assert est.se == pytest.approx(np.sqrt(0.625), abs=1e-10)

    def test_hc1_scales_hc0(self):
        y = np.array([0.0, 1.0, 0.0, 2.0, 1.0, 3.0])
        t = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        w = np.full(6, 1 / 6)
        hc0 = g_compute_effect(y, t, w, hc_variant="HC0")
        hc1 = g_compute_effect(y, t, w, hc_variant="HC1")
        assert hc1.se == pytest.approx(hc0.se * np.sqrt(6 / 4), abs=1e-12)
        with pytest.raises(ValueError):
            g_compute_effect(y, t, w, hc_variant="HC3")

    def test_covariates_enter_the_fit(self):
        rng = np.random.default_rng(4)
        n = 200
        t = (rng.random(n) < 0.5).astype(float)
        x = rng.normal(size=n)
        y = 2.0 * t + 1.5 * x + rng.normal(scale=0.1, size=n)
        w = np.full(n, 1.0 / n)
        est = g_compute_effect(y, t, w, covariates=x.reshape(-1, 1))
        assert est.coef == pytest.approx(2.0, abs=0.05)

    def test_singular_design(self):
        y = np.array([1.0, 2.0, 3.0])
        t = np.ones(3)
        with pytest.raises(EstimationError):
            g_compute_effect(y, t, np.full(3, 1 / 3))


def make_records(rng, n_per_arm=120, effect=0.0):
    records, covariates = [], {}
    for arm in ("control", "female_bot", "male_bot"):
        for i in range(n_per_arm):
            uid = f"{arm}-{i}"
            shift = effect if arm == "female_bot" else 0.0
            treated = arm != "control" and (i % 4 != 0)
            records.append(
                DeltaRecord(
                    user_id=uid,
                    arm=arm,
                    treated=treated,
                    deltas={o: float(rng.normal(shift if treated else 0.0, 1.0)) for o in OUTCOMES},
                    follow_total_pre=100,
                    follow_total_post=105,
                    pol_pre_count=float(rng.uniform(0, 12)),
                    topic=("sports", "entertainment", "lifestyle", "unclassified")[i % 4],
                )
            )
            covariates[uid] = rng.normal(loc=(1.0 if arm == "control" else 1.3), size=4)
    return records, covariates


class TestEstimatePair:
    def test_itt_equals_unweighted_diff_in_means(self):
        rng = np.random.default_rng(5)
        records, covariates = make_records(rng)
        est = estimate_pair(records, covariates, "female", "news_like_pct", "ITT")
        control = [r.deltas["news_like_pct"] for r in records if r.arm == "control"]
        treat = [r.deltas["news_like_pct"] for r in records if r.arm == "female_bot"]
        _, _, sd = standardize(control + treat)
        oracle = (np.mean(treat) - np.mean(control)) / sd
        assert est.coef == pytest.approx(oracle, abs=1e-12)
        assert est.n == len(control) + len(treat)

    def test_treated_balances_covariates(self):
        rng = np.random.default_rng(6)
        records, covariates = make_records(rng)
        est = estimate_pair(records, covariates, "female", "news_like_pct", "Treated")
        assert est.available
        treat = [r for r in records if r.arm == "female_bot" and r.treated]
        assert est.n == len([r for r in records if r.arm == "control"]) + len(treat)

    def test_combined_pools_both_bots(self):
        rng = np.random.default_rng(7)
        records, covariates = make_records(rng)
        est = estimate_pair(records, covariates, "combined", "pol_rt_pct", "ITT")
        n_expected = sum(1 for r in records if r.arm in ("control", "female_bot", "male_bot"))
        assert est.n == n_expected

    def test_missing_deltas_dropped(self):
        rng = np.random.default_rng(8)
        records, covariates = make_records(rng)
        records[0].deltas["news_like_pct"] = None
        est = estimate_pair(records, covariates, "female", "news_like_pct", "ITT")
        full = estimate_pair(records, covariates, "female", "pol_rt_pct", "ITT")
        assert est.n == full.n - 1

    def test_small_partition_flagged_unavailable(self):
        rng = np.random.default_rng(9)
        records, covariates = make_records(rng, n_per_arm=1)
        est = estimate_pair(records, covariates, "female", "news_like_pct", "Treated")
        assert not est.available
        assert est.note

    def test_unknown_estimand(self):
        rng = np.random.default_rng(10)
        records, covariates = make_records(rng, n_per_arm=5)
        with pytest.raises(ValueError):
            estimate_pair(records, covariates, "female", "news_like_pct", "PerProtocol")

    def test_recovers_injected_effect(self):
        rng = np.random.default_rng(11)
        records, covariates = make_records(rng, n_per_arm=400, effect=0.8)
        est = estimate_pair(records, covariates, "female", "news_like_pct", "Treated")
        implied = 0.8 / est.outcome_sd
        assert est.coef == pytest.approx(implied, abs=3 * est.se)
        assert est.p_value < 0.01


class TestSubgroups:
    def test_political_engagement_boundary(self):
        low = DeltaRecord("a", "control", False, {}, 0, 0, pol_pre_count=5.0)
        high = DeltaRecord("b", "control", False, {}, 0, 0, pol_pre_count=5.01)
        assert political_engagement_label(low) == "low"
        assert political_engagement_label(high) == "high"

    def test_partitions(self):
        rng = np.random.default_rng(12)
        records, covariates = make_records(rng)
        result = subgroup_estimates(records, covariates, "political_engagement", "ITT", ["news_like_pct"])
        assert set(result) == {"high", "low"}
        ns = {label: result[label][0].n for label in result}
        pooled = estimate_pair(records, covariates, "female", "news_like_pct", "ITT")
        assert ns["high"] + ns["low"] == pooled.n

    def test_topic_split(self):
        rng = np.random.default_rng(13)
        records, covariates = make_records(rng)
        result = subgroup_estimates(records, covariates, "topic", "ITT", ["pol_like_pct"])
        assert set(result) == {"sports", "entertainment", "lifestyle"}

    def test_unknown_split(self):
        with pytest.raises(ValueError):
            subgroup_estimates([], {}, "age", "ITT", ["news_follows"])

    def test_balance_covariate_names(self):
        assert BALANCE_COVARIATES == ("favorites", "statuses", "followers", "following")
