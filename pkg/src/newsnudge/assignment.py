"""Randomization into the three experiment arms and covariate balance checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betainc

ARMS = ("control", "male_bot", "female_bot")
TREATMENT_ARMS = ("male_bot", "female_bot")


def assign_arms(
    user_ids: Iterable[str],
    seed: int,
    proportions: Sequence[float] = (1.0, 1.0, 1.0),
) -> dict[str, str]:
    """Deterministically split ``user_ids`` into the three arms.

    Ids are sorted before the seeded shuffle, so the mapping depends only on
    the id set and the seed. Arm sizes follow a largest-remainder split of the
    normalized proportions and differ from the exact split by at most one.
    """
    ids = sorted(set(user_ids))
    if not ids:
        raise ValueError("cannot assign an empty id set")
    weights = np.asarray(proportions, dtype=float)
    if weights.shape != (3,) or np.any(weights <= 0):
        raise ValueError("proportions must be 3 positive weights")
    weights = weights / weights.sum()

    n = len(ids)
    exact = weights * n
    sizes = np.floor(exact).astype(int)
    remainder = n - sizes.sum()
    # Distribute leftovers to the largest fractional parts; ties go to the
    # earlier arm so the split is deterministic.
    order = np.argsort([-frac for frac in exact - sizes], kind="stable")
    for i in range(remainder):
        sizes[order[i]] += 1

    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(n)]
    result: dict[str, str] = {}
    start = 0
    for arm, size in zip(ARMS, sizes):
        for uid in shuffled[start : start + size]:
            result[uid] = arm
        start += size
    return result


@dataclass
class BalanceReport:
    metric_name: str
    group_means: dict[str, float]
    f_stat: float
    p_value: float
    degenerate: bool = False


def f_sf(f_stat: float, df1: int, df2: int) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if f_stat <= 0:
        return 1.0
    x = df2 / (df2 + df1 * f_stat)
    return float(betainc(df2 / 2.0, df1 / 2.0, x))


def anova_balance(
    groups: Mapping[str, Sequence[float]], metric_name: str = ""
) -> BalanceReport:
    """One-way ANOVA across arms.

    Degenerate inputs are reported rather than raised: zero within-group
    variance with unequal means gives p=0 with the ``degenerate`` flag, and a
    fully constant input gives F=0, p=1.
    """
    arms = list(groups)
    if len(arms) < 2:
        raise ValueError("need at least two groups")
    samples = [np.asarray(groups[a], dtype=float) for a in arms]
    for arm, values in zip(arms, samples):
        if values.size < 2:
            raise ValueError(f"group {arm!r} needs at least 2 observations")

    n_total = sum(v.size for v in samples)
    k = len(samples)
    grand = np.concatenate(samples).mean()
    means = {a: float(v.mean()) for a, v in zip(arms, samples)}
    ss_between = sum(v.size * (v.mean() - grand) ** 2 for v in samples)
    ss_within = sum(float(((v - v.mean()) ** 2).sum()) for v in samples)

    if ss_within == 0.0:
        if ss_between <= 0.0 or np.isclose(ss_between, 0.0):
            return BalanceReport(metric_name, means, 0.0, 1.0)
        return BalanceReport(metric_name, means, float("inf"), 0.0, degenerate=True)

    ms_between = ss_between / (k - 1)
    ms_within = ss_within / (n_total - k)
    f_stat = ms_between / ms_within
    if np.isclose(f_stat, 0.0):
        return BalanceReport(metric_name, means, 0.0, 1.0)
    p = f_sf(f_stat, k - 1, n_total - k)
    return BalanceReport(metric_name, means, float(f_stat), p)
