"""Simulation design: covariates, six treatment scenarios, binary outcome.

Ten covariates, six propensity scenarios (a)-(f) of increasing complexity and
decreasing overlap, and a logistic outcome model with treatment interactions.
:func:`run_study` replicates an estimation pipeline and aggregates metrics.
"""

from __future__ import annotations

import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .basis import BalanceBasis, Dataset, GbcalError, build_balance_basis, expit
from .estimators import (MetricsRow, credible_interval, ipw_estimate, metrics,
                         sandwich_ci)
from .gbayes import McmcOptions, Priors, run_two_stage
from .optimize import (ConvergenceError, SolverOptions, fit_cbps_exact,
                       fit_logistic_mle, fit_rcal)
from .pcic import DEFAULT_OMEGA_GRID, select_omega

log = logging.getLogger(__name__)

TAU0_PAPER = 0.152

# Treatment-model coefficients; the first entry multiplies the intercept.
BETA11 = np.array([0.4, 0.8, -0.25, 0.6, -0.4, -0.8, -0.5, 0.7])
BETA12 = 2.5 * BETA11
BETA21 = np.concatenate([0.6 * BETA11, [1.0, 0.96, -0.3, -0.48, -0.96]])
BETA22 = np.concatenate([0.4 * BETA11, [1.0, 1.6, -0.5, -0.8, -1.6]])
BETA31 = np.concatenate([BETA11, [0.4, -0.4, 0.5, 0.5, -0.25, -0.5]])
BETA32 = np.concatenate([0.5 * BETA11, [0.8, -0.8, 1.0, 1.0, -0.5, -1.0]])

# Outcome-model coefficients, ordered as the columns of outcome_design().
XI = np.array([-2, 0.2, 1, 1, 0.3, -0.36, -0.73, -0.2, 0.71, -0.19, 0.26,
               -0.36, 0.15, -0.252, -0.1, 0.355])

SCENARIOS = {
    "a": ("small complexity, good overlap", "linear", BETA11),
    "b": ("small complexity, poor overlap", "linear", BETA12),
    "c": ("moderate complexity, good overlap", "moderate", BETA21),
    "d": ("moderate complexity, poor overlap", "moderate", BETA22),
    "e": ("large complexity, good overlap", "large", BETA31),
    "f": ("large complexity, poor overlap", "large", BETA32),
}

CONFOUNDERS = (0, 1, 2, 3)
PREDICTORS = (0, 1, 2, 3, 4, 5, 6)


def constants_checksum() -> str:
    """SHA-256 over all scenario and outcome constants (frozen in tests)."""
    h = hashlib.sha256()
    for arr in (BETA11, BETA12, BETA21, BETA22, BETA31, BETA32, XI):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the n x 10 covariate matrix (columns X1..X10)."""
    if n < 1:
        raise GbcalError("n must be >= 1")
    X = np.empty((n, 10))
    X[:, 0] = rng.binomial(1, 0.5, n)
    X[:, 2] = rng.binomial(1, 0.5, n)
    X[:, 5] = rng.binomial(1, 0.5, n)
    X[:, 8] = rng.binomial(1, 0.5, n)
    X[:, 6] = rng.standard_normal(n)
    X[:, 9] = rng.standard_normal(n)
    X[:, 1] = rng.normal(X[:, 5], 0.1)
    X[:, 3] = rng.normal(X[:, 8], 0.1)
    X[:, 4] = rng.binomial(1, expit(0.4 * (2 * X[:, 0] - 1)))
    X[:, 7] = rng.binomial(1, expit(0.4 * (2 * X[:, 2] - 1)))
    return X


def treatment_design(X: np.ndarray, scenario: str) -> np.ndarray:
    if scenario not in SCENARIOS:
        raise GbcalError(f"unknown scenario {scenario!r}")
    kind = SCENARIOS[scenario][1]
    x = [X[:, j] for j in range(10)]
    cols = [np.ones(X.shape[0])] + x[:7]
    if kind == "moderate":
        cols += [x[1] ** 2, x[0] * x[2], x[1] * x[3], x[3] * x[4], x[4] * x[5]]
    elif kind == "large":
        cols += [x[0] * x[2], x[4] * x[5], np.sin(2 * x[1] * x[3]),
                 np.cos(2 * x[3] * x[4]), np.exp(2 * x[1] * x[3]),
                 x[1] * x[4] * x[5]]
    return np.column_stack(cols)


def true_propensity(X: np.ndarray, scenario: str, beta=None) -> np.ndarray:
    D = treatment_design(X, scenario)
    beta = SCENARIOS[scenario][2] if beta is None else np.asarray(beta, float)
    return expit(D @ beta)


def gen_treatment(X: np.ndarray, scenario: str, rng: np.random.Generator,
                  beta=None) -> np.ndarray:
    """A ~ Bernoulli(expit(h_A(X))) under the given scenario."""
    return rng.binomial(1, true_propensity(X, scenario, beta)).astype(float)


def outcome_design(X: np.ndarray, A) -> np.ndarray:
    x = [X[:, j] for j in range(10)]
    A = np.broadcast_to(np.asarray(A, dtype=float), (X.shape[0],))
    return np.column_stack([
        np.ones(X.shape[0]), A, A * x[1], A * x[3],
        x[0], x[1], x[2], x[3], x[7], x[8], x[9],
        x[1] ** 2, x[0] * x[2], x[1] * x[3], x[3] * x[7], x[7] * x[8]])


def outcome_probability(X: np.ndarray, A, xi=XI) -> np.ndarray:
    """P(Y=1 | X, A); same as ``expit(outcome_design(X, A) @ xi)``."""
    xi = np.asarray(xi, dtype=float)
    x1, x2, x3, x4, x8, x9, x10 = (X[:, j] for j in (0, 1, 2, 3, 7, 8, 9))
    eta = (xi[0] + xi[4] * x1 + xi[5] * x2 + xi[6] * x3 + xi[7] * x4 + xi[8] * x8
           + xi[9] * x9 + xi[10] * x10 + xi[11] * x2 * x2 + xi[12] * x1 * x3
           + xi[13] * x2 * x4 + xi[14] * x4 * x8 + xi[15] * x8 * x9)
    eta = eta + np.asarray(A, dtype=float) * (xi[1] + xi[2] * x2 + xi[3] * x4)
    return expit(eta)


def gen_outcome(X: np.ndarray, A, rng: np.random.Generator, xi=XI) -> np.ndarray:
    return rng.binomial(1, outcome_probability(X, A, xi)).astype(float)


def gen_dataset(n: int, scenario: str, rng: np.random.Generator) -> Dataset:
    X = gen_covariates(n, rng)
    A = gen_treatment(X, scenario, rng)
    Y = gen_outcome(X, A, rng)
    return Dataset(Y, A, X, names=tuple(f"X{j}" for j in range(1, 11)))


def true_ate_oracle(m: int, rng: np.random.Generator, xi=XI,
                    chunk: int = 1_000_000) -> Tuple[float, float]:
    """Monte Carlo ATE: mean of P(Y=1|X,A=1) - P(Y=1|X,A=0) over m draws of X.

    The treatment model does not enter, so the value is common to all
    scenarios.  Returns ``(estimate, monte_carlo_se)``.
    """
    if m < 100_000:
        raise GbcalError("the ATE oracle needs m >= 1e5")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < m:
        k = min(chunk, m - done)
        X = gen_covariates(k, rng)
        d = outcome_probability(X, 1.0, xi) - outcome_probability(X, 0.0, xi)
        total += d.sum()
        total_sq += (d * d).sum()
        done += k
    mean = total / m
    var = total_sq / m - mean ** 2
    return mean, float(np.sqrt(var / m))


# ---------------------------------------------------------------------------
# replication harness

METHODS = ("logit", "cbps", "rcal-cv", "brcal-pcic")


@dataclass(frozen=True)
class StudyConfig:
    scenario: str = "a"
    n: int = 500
    replications: int = 500
    adjustment: str = "confounders"
    methods: Tuple[str, ...] = ("logit", "cbps", "rcal-cv", "brcal-pcic")
    priors: Priors = Priors()
    omega_grid: Tuple[float, ...] = DEFAULT_OMEGA_GRID
    mcmc: McmcOptions = McmcOptions(R=1000, burn_in=1000)
    seed: int = 20240101
    tau0: float = TAU0_PAPER
    level: float = 0.95
    cv_grid: Tuple[float, ...] = tuple(np.geomspace(0.005, 0.5, 10))
    cv_folds: int = 5
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise GbcalError(f"unknown scenario {self.scenario!r}")
        if self.n < 20:
            raise GbcalError("n must be >= 20")
        if self.replications < 1:
            raise GbcalError("replications must be >= 1")
        if self.adjustment not in ("confounders", "predictors"):
            raise GbcalError("adjustment must be 'confounders' or 'predictors'")
        for m in self.methods:
            parse_method(m)


def parse_method(tag: str):
    """Split a method tag into (kind, parameter).

    ``logit``, ``cbps``, ``rcal-cv``, ``rcal:<lambda>``, ``brcal-pcic``,
    ``brcal:<omega>``, ``bootstrap:<omega>``.
    """
    if tag in ("logit", "cbps", "rcal-cv", "brcal-pcic"):
        return tag, None
    kind, sep, val = tag.partition(":")
    if sep and kind in ("rcal", "brcal", "bootstrap"):
        try:
            return kind, float(val)
        except ValueError:
            pass
    raise GbcalError(f"unknown method {tag!r}")


def adjustment_basis(X: np.ndarray, adjustment: str) -> BalanceBasis:
    cols = CONFOUNDERS if adjustment == "confounders" else PREDICTORS
    return build_balance_basis(X, [("raw", j) for j in cols])


def cv_rcal_lambda(dataset: Dataset, basis: BalanceBasis, grid: Sequence[float],
                   folds: int, rng: np.random.Generator,
                   opts: SolverOptions = SolverOptions()) -> Tuple[float, np.ndarray]:
    """K-fold CV of the normalized calibration loss over a lambda grid."""
    from .losses import calibration_loss_G

    G = basis.transform(dataset.X)
    A = dataset.A
    fold_of = rng.permutation(np.arange(dataset.n) % folds)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    cv = np.zeros(grid.size)
    for f in range(folds):
        train, test = fold_of != f, fold_of == f
        sub = dataset.subset(train)
        warm = None
        for i, lam in enumerate(grid):
            fit = fit_rcal(sub, basis, lam, opts, alpha0=warm)
            warm = fit.alpha
            cv[i] += calibration_loss_G(fit.alpha, G[test], A[test]) / dataset.n
    best = grid[int(np.argmin(cv))]
    return float(best), np.column_stack([grid, cv])


@dataclass
class Replicate:
    estimates: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    omega: Optional[float] = None


def _interval_fit(fit, dataset, level):
    est = ipw_estimate(fit.e, dataset)
    lo, hi = sandwich_ci(fit.e, dataset, level)
    return est.tau, lo, hi


def _posterior_summary(draws, level):
    lo, hi = credible_interval(draws.tau, level)
    return float(np.mean(draws.tau)), lo, hi


def run_replication(config: StudyConfig, rep: int) -> Replicate:
    """Generate one dataset and apply every configured method to it."""
    ss = np.random.SeedSequence(config.seed, spawn_key=(rep,))
    data_rng, cv_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    mcmc_seed = int(ss.generate_state(1)[0])
    dataset = gen_dataset(config.n, config.scenario, data_rng)
    basis = adjustment_basis(dataset.X, config.adjustment)
    out = Replicate()
    for tag in config.methods:
        kind, par = parse_method(tag)
        try:
            if kind == "logit":
                res = _interval_fit(fit_logistic_mle(dataset, basis), dataset,
                                    config.level)
            elif kind == "cbps":
                res = _interval_fit(fit_cbps_exact(dataset, basis), dataset,
                                    config.level)
            elif kind == "rcal":
                res = _interval_fit(fit_rcal(dataset, basis, par), dataset,
                                    config.level)
            elif kind == "rcal-cv":
                lam, _ = cv_rcal_lambda(dataset, basis, config.cv_grid,
                                        config.cv_folds, cv_rng)
                res = _interval_fit(fit_rcal(dataset, basis, lam), dataset,
                                    config.level)
            elif kind == "brcal-pcic":
                opts = replace(config.mcmc, seed=mcmc_seed)
                omega, _, draws = select_omega(dataset, basis, config.priors,
                                               config.omega_grid, opts)
                out.omega = omega
                res = _posterior_summary(draws, config.level)
            else:
                opts = replace(config.mcmc, seed=mcmc_seed,
                               backend="metropolis" if kind == "brcal"
                               else "bootstrap")
                draws = run_two_stage(dataset, basis, par, config.priors, opts)
                res = _posterior_summary(draws, config.level)
        except (ConvergenceError, GbcalError, np.linalg.LinAlgError) as exc:
            out.failures[tag] = f"{type(exc).__name__}: {exc}"
            continue
        out.estimates[tag] = res
    return out


def _run_chunk(args):
    config, reps = args
    return [run_replication(config, r) for r in reps]


@dataclass
class StudyResult:
    config: StudyConfig
    rows: List[MetricsRow]
    estimates: Dict[str, np.ndarray]
    failures: Dict[str, int]
    omegas: np.ndarray


def run_study(config: StudyConfig, progress: bool = False) -> StudyResult:
    """Replicate the configured pipeline and aggregate performance metrics.

    Each replication draws from its own seed substream (master seed, index),
    so results do not depend on ``workers``.  Failed fits are excluded and
    counted per method.
    """
    reps = list(range(config.replications))
    workers = max(1, int(config.workers))
    if workers == 1:
        results = []
        for r in reps:
            results.append(run_replication(config, r))
            if progress and (r + 1) % 10 == 0:
                log.info("replication %d/%d", r + 1, len(reps))
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, [(config, c) for c in chunks]))
        by_rep = {}
        for c, part in zip(chunks, parts):
            by_rep.update(zip(c, part))
        results = [by_rep[r] for r in reps]

    estimates, failures = {}, {}
    for tag in config.methods:
        vals = [res.estimates[tag] for res in results if tag in res.estimates]
        failures[tag] = sum(tag in res.failures for res in results)
        estimates[tag] = np.array(vals, dtype=float).reshape(-1, 3)
    ref = None
    if "brcal-pcic" in config.methods and len(estimates["brcal-pcic"]):
        ref = metrics(estimates["brcal-pcic"][:, 0], estimates["brcal-pcic"][:, 1:],
                      config.tau0)
    rows = []
    for tag in config.methods:
        est = estimates[tag]
        if not len(est):
            continue
        row = metrics(est[:, 0], est[:, 1:], config.tau0,
                      reference=None if tag == "brcal-pcic" else ref,
                      scenario=config.scenario, method=tag, n=config.n)
        rows.append(row)
    omegas = np.array([res.omega for res in results if res.omega is not None])
    return StudyResult(config, rows, estimates, failures, omegas)


def default_workers() -> int:
    env = os.environ.get("GBCAL_THREADS")
    if env:
        return max(1, int(env))
    return 1
