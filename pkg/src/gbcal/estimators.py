"""Hajek IPW estimator, intervals, SMD diagnostics and simulation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from .basis import Dataset, GbcalError


class IpwResult(NamedTuple):
    theta1: float
    theta0: float
    tau: float


@dataclass(frozen=True)
class EffectEstimate:
    theta1: float
    theta0: float
    tau: float
    lo: float
    hi: float
    level: float
    kind: str  # "frequentist-CI" or "credible"
    method: str

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise GbcalError("level must lie in (0, 1)")


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    n: int
    bias: float
    rmse: float
    cp: float
    avl: float
    br: Optional[float] = None
    rr: Optional[float] = None
    replications: int = 0


def _check_e(e, dataset: Dataset):
    e = np.asarray(e, dtype=float)
    if e.shape != (dataset.n,):
        raise GbcalError(f"propensity vector has shape {e.shape}, "
                         f"expected ({dataset.n},)")
    if not ((e > 0) & (e < 1)).all():
        raise GbcalError("propensities must lie strictly inside (0, 1)")
    dataset.check_arms()
    return e


def ipw_estimate(e, dataset: Dataset) -> IpwResult:
    """Ratio-form (Hajek) inverse-probability-weighted arm means and ATE."""
    e = _check_e(e, dataset)
    A, Y = dataset.A, dataset.Y
    w1, w0 = A / e, (1 - A) / (1 - e)
    th1 = float(np.sum(w1 * Y) / np.sum(w1))
    th0 = float(np.sum(w0 * Y) / np.sum(w0))
    return IpwResult(th1, th0, th1 - th0)


def credible_interval(draws, level: float = 0.95):
    """Equal-tailed percentile interval with linear interpolation."""
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size < 2:
        raise GbcalError("need at least 2 draws for an interval")
    q = (1 - level) / 2
    lo, hi = np.quantile(draws, [q, 1 - q])
    return float(lo), float(hi)


def sandwich_ci(e, dataset: Dataset, level: float = 0.95):
    """Normal interval for the Hajek ATE treating the weights as known.

    The variance is the sum of squared influence terms
    ``w1_i (Y_i - th1) / sum(w1) - w0_i (Y_i - th0) / sum(w0)``.  It ignores
    estimation of the propensity coefficients, so it is an approximation.
    ``e`` may be a propensity vector or a fitted model carrying ``.e``.
    """
    e = _check_e(getattr(e, "e", e), dataset)
    A, Y = dataset.A, dataset.Y
    w1, w0 = A / e, (1 - A) / (1 - e)
    th1 = np.sum(w1 * Y) / np.sum(w1)
    th0 = np.sum(w0 * Y) / np.sum(w0)
    infl = w1 * (Y - th1) / np.sum(w1) - w0 * (Y - th0) / np.sum(w0)
    se = float(np.sqrt(np.sum(infl ** 2)))
    if se == 0:
        raise GbcalError("zero variance: interval is degenerate")
    z = stats.norm.ppf(0.5 + level / 2)
    tau = th1 - th0
    return float(tau - z * se), float(tau + z * se)


def ipw_weights(e, A) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    return A / e + (1 - A) / (1 - e)


def smd(X, A, weights=None) -> np.ndarray:
    """Standardized mean difference (treated minus control) per column.

    Weighted arm means over an unweighted pooled SD
    ``sqrt((var_1 + var_0) / 2)`` (sample variances), so before/after
    comparisons share the denominator.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = np.asarray(A, dtype=float)
    t, c = A == 1, A == 0
    if not t.any() or not c.any():
        raise GbcalError("both treatment arms must be non-empty")
    w = np.ones(A.shape[0]) if weights is None else np.asarray(weights, float)
    m1 = (w[t] @ X[t]) / w[t].sum()
    m0 = (w[c] @ X[c]) / w[c].sum()
    v1 = X[t].var(axis=0, ddof=1) if t.sum() > 1 else np.zeros(X.shape[1])
    v0 = X[c].var(axis=0, ddof=1) if c.sum() > 1 else np.zeros(X.shape[1])
    pooled = np.sqrt((v1 + v0) / 2)
    if (pooled == 0).any():
        bad = np.flatnonzero(pooled == 0).tolist()
        raise GbcalError(f"zero pooled SD in column(s) {bad}")
    return (m1 - m0) / pooled


def metrics(tau_hat, intervals, tau0: float, reference: Optional[MetricsRow] = None,
            scenario: str = "", method: str = "", n: int = 0) -> MetricsRow:
    """Bias, RMSE, coverage, average interval length and ratios to a reference.

    ``intervals`` is an (m, 2) array of (lo, hi).  BR and RR are
    ``|bias| / |bias_ref|`` and ``rmse / rmse_ref``.
    """
    tau_hat = np.asarray(tau_hat, dtype=float).ravel()
    if tau_hat.size < 1:
        raise GbcalError("need at least one replication")
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    bias = float(tau_hat.mean() - tau0)
    rmse = float(np.sqrt(np.mean((tau_hat - tau0) ** 2)))
    cp = float(np.mean((iv[:, 0] <= tau0) & (tau0 <= iv[:, 1])))
    avl = float(np.mean(iv[:, 1] - iv[:, 0]))
    br = rr = None
    if reference is not None:
        br = abs(bias) / abs(reference.bias) if reference.bias != 0 else float("inf")
        rr = rmse / reference.rmse if reference.rmse != 0 else float("inf")
    return MetricsRow(scenario, method, n, bias, rmse, cp, avl, br, rr,
                      tau_hat.size)


def effect_from_draws(theta1, theta0, level=0.95, method="brcal") -> EffectEstimate:
    theta1 = np.asarray(theta1, float)
    theta0 = np.asarray(theta0, float)
    tau = theta1 - theta0
    lo, hi = credible_interval(tau, level)
    return EffectEstimate(float(theta1.mean()), float(theta0.mean()),
                          float(tau.mean()), lo, hi, level, "credible", method)


def effect_from_fit(e, dataset: Dataset, level=0.95, method="") -> EffectEstimate:
    est = ipw_estimate(e, dataset)
    lo, hi = sandwich_ci(e, dataset, level)
    return EffectEstimate(est.theta1, est.theta0, est.tau, lo, hi, level,
                          "frequentist-CI", method)


def weighted_arm_means(X, A, weights: Sequence[float]):
    X = np.asarray(X, float)
    A = np.asarray(A, float)
    w = np.asarray(weights, float)
    t, c = A == 1, A == 0
    return (w[t] @ X[t]) / w[t].sum(), (w[c] @ X[c]) / w[c].sum()
