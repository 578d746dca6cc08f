"""Treatment-effect estimation: entropy balancing plus pairwise G-computation.

The treated comparison group is reweighted so its covariate means match the
control group exactly (minimum-KL weights, solved via damped Newton on the
dual), then each effect is a weighted least squares fit of the standardized
outcome delta on a treatment indicator, with an HC-sandwich standard error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .metrics import DeltaRecord

BALANCE_COVARIATES = ("favorites", "statuses", "followers", "following")
ADJUSTED_DIFF_THRESHOLD = 0.1


class EstimationError(RuntimeError):
    pass


class ConvergenceError(EstimationError):
    def __init__(self, message: str, max_violation: float):
        super().__init__(f"{message} (max constraint violation {max_violation:.3e})")
        self.max_violation = max_violation


def standardize(values: Sequence[float]) -> tuple[np.ndarray, float, float]:
    """Center to mean 0 and scale to sample sd 1 (n-1 denominator)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        raise EstimationError("standardize needs at least 2 distinct values")
    mean = x.mean()
    sd = x.std(ddof=1)
    return (x - mean) / sd, float(mean), float(sd)


def _log_partition(lam: np.ndarray, c: np.ndarray, m: np.ndarray) -> float:
    tilt = c @ lam
    peak = tilt.max()
    return float(peak + np.log(np.exp(tilt - peak).sum()) - m @ lam)


def _tilted_weights(lam: np.ndarray, c: np.ndarray) -> np.ndarray:
    tilt = c @ lam
    w = np.exp(tilt - tilt.max())
    return w / w.sum()


def entropy_balance(
    source: np.ndarray,
    target_moments: Sequence[float],
    tol: float = 1e-8,
    max_iter: int = 200,
) -> np.ndarray:
    """Weights on the source rows that match the target covariate means.

    Minimizes KL divergence from uniform weights subject to sum(w) = 1 and
    exact first-moment constraints, solved in the dual: w(lambda) is
    proportional to exp(c . lambda) and lambda minimizes the log-partition
    objective by damped Newton from lambda = 0. Covariates are standardized
    internally for conditioning; ``tol`` bounds the max moment violation on
    that standardized scale.
    """
    c = np.atleast_2d(np.asarray(source, dtype=float))
    if c.ndim != 2:
        raise EstimationError("source must be a 2-D covariate matrix")
    m = np.asarray(target_moments, dtype=float)
    if m.shape != (c.shape[1],):
        raise EstimationError("target moments must match the covariate columns")

    # Standardize columns; constant columns must already match the target.
    mean = c.mean(axis=0)
    sd = c.std(axis=0, ddof=1) if c.shape[0] > 1 else np.zeros(c.shape[1])
    keep = sd > 0
    for j in np.nonzero(~keep)[0]:
        if not np.isclose(m[j], c[0, j]):
            raise ConvergenceError(
                f"covariate {j} is constant in the source but differs from the target",
                abs(m[j] - c[0, j]),
            )
    cs = (c[:, keep] - mean[keep]) / sd[keep]
    ms = (m[keep] - mean[keep]) / sd[keep]
    n = c.shape[0]
    if not keep.any():
        return np.full(n, 1.0 / n)

    lo, hi = cs.min(axis=0), cs.max(axis=0)
    outside = (ms < lo) | (ms > hi)
    if outside.any():
        worst = float(np.max(np.maximum(lo - ms, ms - hi)))
        raise ConvergenceError("target moments lie outside the source convex hull", worst)

    lam = np.zeros(cs.shape[1])
    for _ in range(max_iter):
        w = _tilted_weights(lam, cs)
        grad = w @ cs - ms
        g_norm = float(np.max(np.abs(grad)))
        if g_norm <= tol:
            return w
        wc = w @ cs
        hess = (cs.T * w) @ cs - np.outer(wc, wc)
        hess += 1e-12 * np.eye(hess.shape[0])
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = -grad
        # Halve the step until the constraint violation shrinks; the dual is
        # smooth and strictly convex on the (hull-checked) feasible set, so
        # the gradient norm is a reliable merit function all the way down to
        # machine precision, where an objective-based line search stalls.
        accepted = False
        for _ in range(60):
            candidate = lam + step
            w_trial = _tilted_weights(candidate, cs)
            if float(np.max(np.abs(w_trial @ cs - ms))) < g_norm:
                lam = candidate
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            break

    w = _tilted_weights(lam, cs)
    violation = float(np.max(np.abs(w @ cs - ms)))
    if violation <= tol:
        return w
    raise ConvergenceError("entropy balancing did not converge", violation)


def adjusted_mean_diff(
    weights: np.ndarray,
    source: np.ndarray,
    target_moments: Sequence[float],
    target_matrix: np.ndarray | None = None,
) -> np.ndarray:
    """Standardized gap between the weighted source mean and the target mean.

    The scale is the pooled sd of source and target groups when the target
    matrix is available, otherwise the source sd.
    """
    c = np.atleast_2d(np.asarray(source, dtype=float))
    m = np.asarray(target_moments, dtype=float)
    gap = np.abs(weights @ c - m)
    var_s = c.var(axis=0, ddof=1)
    if target_matrix is not None:
        var_t = np.atleast_2d(np.asarray(target_matrix, dtype=float)).var(axis=0, ddof=1)
        scale = np.sqrt((var_s + var_t) / 2.0)
    else:
        scale = np.sqrt(var_s)
    scale = np.where(scale > 0, scale, 1.0)
    return gap / scale


@dataclass
class EffectEstimate:
    outcome: str
    pair: str
    estimand: str
    coef: float
    se: float
    p_value: float
    n: int
    outcome_sd: float = 1.0
    available: bool = True
    note: str = ""

    def ci95(self) -> tuple[float, float]:
        return self.coef - 1.96 * self.se, self.coef + 1.96 * self.se

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "pair": self.pair,
            "estimand": self.estimand,
            "coef": self.coef,
            "se": self.se,
            "p_value": self.p_value,
            "n": self.n,
            "outcome_sd": self.outcome_sd,
            "available": self.available,
            "note": self.note,
        }


def g_compute_effect(
    outcome: np.ndarray,
    arm_indicator: np.ndarray,
    weights: np.ndarray,
    covariates: np.ndarray | None = None,
    hc_variant: str = "HC0",
    outcome_name: str = "",
    pair: str = "",
    estimand: str = "",
    outcome_sd: float = 1.0,
) -> EffectEstimate:
    """Weighted least squares of outcome on a treatment indicator.

    The G-computation ATE is the average predicted difference between setting
    every unit to treatment versus control; without covariates it collapses to
    the weighted difference in group means. SEs are a heteroskedasticity-
    consistent sandwich on the weighted fit; p-values use the normal
    approximation.
    """
    y = np.asarray(outcome, dtype=float)
    t = np.asarray(arm_indicator, dtype=float)
    w = np.asarray(weights, dtype=float)
    columns = [np.ones_like(y), t]
    if covariates is not None:
        columns.extend(np.atleast_2d(np.asarray(covariates, dtype=float).T))
    x = np.column_stack(columns)

    xtw = x.T * w
    gram = xtw @ x
    try:
        bread = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular design matrix") from exc
    beta = bread @ (xtw @ y)

    x1, x0 = x.copy(), x.copy()
    x1[:, 1], x0[:, 1] = 1.0, 0.0
    ate = float(np.mean(x1 @ beta - x0 @ beta))

    resid = y - x @ beta
    if hc_variant == "HC0":
        scale = 1.0
    elif hc_variant == "HC1":
        n, k = x.shape
        scale = n / (n - k)
    else:
        raise ValueError(f"unknown HC variant {hc_variant!r}")
    meat = (x.T * (w**2 * resid**2)) @ x
    vcov = scale * bread @ meat @ bread
    se = float(np.sqrt(vcov[1, 1]))
    if se <= 0:
        raise EstimationError("degenerate sandwich variance")
    z = ate / se
    p = float(2.0 * ndtr(-abs(z)))
    return EffectEstimate(
        outcome=outcome_name,
        pair=pair,
        estimand=estimand,
        coef=ate,
        se=se,
        p_value=p,
        n=y.size,
        outcome_sd=outcome_sd,
    )


ARM_PAIRS = {
    "female": ("female_bot",),
    "male": ("male_bot",),
    "combined": ("male_bot", "female_bot"),
}


def estimate_pair(
    records: Sequence[DeltaRecord],
    covariates: Mapping[str, np.ndarray],
    pair: str,
    outcome: str,
    estimand: str,
    hc_variant: str = "HC0",
    balance_tol: float = 1e-8,
) -> EffectEstimate:
    """One treatment-vs-control effect for one outcome.

    ITT keeps every assigned user with uniform weights (randomization already
    balances the groups). Treated keeps only users who actually received a
    reply and entropy-balances them to the control covariate means. Records
    with an absent delta for the outcome are dropped from the fit.
    """
    arms = ARM_PAIRS[pair]
    control = [
        r for r in records if r.arm == "control" and r.deltas.get(outcome) is not None
    ]
    if estimand == "ITT":
        treat = [
            r for r in records if r.arm in arms and r.deltas.get(outcome) is not None
        ]
    elif estimand == "Treated":
        treat = [
            r
            for r in records
            if r.arm in arms and r.treated and r.deltas.get(outcome) is not None
        ]
    else:
        raise ValueError(f"unknown estimand {estimand!r}")

    unavailable = EffectEstimate(outcome, pair, estimand, 0.0, 0.0, 1.0, 0, available=False)
    if len(control) < 2 or len(treat) < 2:
        unavailable.note = "partition too small"
        return unavailable

    if estimand == "Treated":
        source = np.array([covariates[r.user_id] for r in treat])
        target = np.array([covariates[r.user_id] for r in control]).mean(axis=0)
        try:
            w_treat = entropy_balance(source, target, tol=balance_tol)
        except EstimationError as exc:
            unavailable.note = f"balance failed: {exc}"
            return unavailable
    else:
        w_treat = np.full(len(treat), 1.0 / len(treat))
    w_control = np.full(len(control), 1.0 / len(control))

    values = [r.deltas[outcome] for r in control] + [r.deltas[outcome] for r in treat]
    try:
        z, _, sd = standardize(values)
    except EstimationError:
        unavailable.note = "outcome has no variance"
        return unavailable
    indicator = np.concatenate([np.zeros(len(control)), np.ones(len(treat))])
    weights = np.concatenate([w_control, w_treat])
    estimate = g_compute_effect(
        z,
        indicator,
        weights,
        hc_variant=hc_variant,
        outcome_name=outcome,
        pair=pair,
        estimand=estimand,
        outcome_sd=sd,
    )
    return estimate


def political_engagement_label(record: DeltaRecord, cutoff: float = 5.0) -> str:
    # High engagement: more than `cutoff` political (re)tweets in the pre
    # window; the boundary value itself counts as low.
    return "high" if record.pol_pre_count > cutoff else "low"


def subgroup_estimates(
    records: Sequence[DeltaRecord],
    covariates: Mapping[str, np.ndarray],
    split: str,
    estimand: str,
    outcomes: Sequence[str],
    pairs: Sequence[str] = ("female", "male"),
    hc_variant: str = "HC0",
) -> dict[str, list[EffectEstimate]]:
    """Re-run balancing and estimation inside each partition of the split."""
    if split == "political_engagement":
        labels = ("high", "low")
        label_of = political_engagement_label
    elif split == "topic":
        labels = ("sports", "entertainment", "lifestyle")
        label_of = lambda r: r.topic
    else:
        raise ValueError(f"unknown split {split!r}")

    results: dict[str, list[EffectEstimate]] = {}
    for label in labels:
        subset = [r for r in records if label_of(r) == label]
        estimates = []
        for pair in pairs:
            for outcome in outcomes:
                if not subset:
                    estimates.append(
                        EffectEstimate(
                            outcome, pair, estimand, 0.0, 0.0, 1.0, 0,
                            available=False, note="empty partition",
                        )
                    )
                    continue
                estimates.append(
                    estimate_pair(
                        subset, covariates, pair, outcome, estimand, hc_variant
                    )
                )
        results[label] = estimates
    return results
