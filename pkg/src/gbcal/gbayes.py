"""Generalized-posterior sampling for the propensity and outcome parameters.

Step 1 draws ``(alpha, lambda)`` from

    p(alpha | lambda) p(lambda) exp(-omega * calibration_loss(alpha))

with a Laplace prior (rate ``lambda``) on the penalized coefficients, a flat
prior on the intercept and a Gamma prior on ``lambda``.  The default backend
is adaptive random-walk Metropolis for ``alpha`` inside a Gibbs sweep that
draws ``lambda`` from its conjugate Gamma full conditional.  Step 2 draws each
arm mean exactly from its Normal generalized posterior given ``alpha``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import (BalanceBasis, Dataset, GbcalError, clamp_eta, count_clamped,
                    expit, ETA_CLAMP)
from .losses import (arm_weights, calibration_hess_G, calibration_loss_G,
                     design, l1_norm)
from .optimize import ConvergenceError, SolverOptions, rcal_path

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Priors:
    """Gamma(shape, rate) on lambda; Normal(mean, precision) on each arm mean."""

    lambda_shape: float = 0.01
    lambda_rate: float = 0.1
    theta1_mean: float = 0.0
    theta0_mean: float = 0.0
    theta1_precision: float = 1e-4
    theta0_precision: float = 1e-4

    def __post_init__(self):
        if not (self.lambda_shape > 0 and self.lambda_rate > 0):
            raise GbcalError("Gamma prior shape and rate must be positive")
        if not (self.theta1_precision > 0 and self.theta0_precision > 0):
            raise GbcalError("theta prior precisions must be positive")

    def theta_prior(self, k: int):
        if k == 1:
            return self.theta1_mean, self.theta1_precision
        if k == 0:
            return self.theta0_mean, self.theta0_precision
        raise GbcalError(f"arm must be 0 or 1, got {k!r}")


@dataclass(frozen=True)
class McmcOptions:
    R: int = 2000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    backend: str = "metropolis"  # or "bootstrap"
    target_accept: float = 0.234
    proposal_scale: Optional[float] = None  # default 2.38 / sqrt(dim)
    adapt: bool = True
    adapt_start: int = 200
    alpha_init: Optional[tuple] = None
    lambda_init: Optional[float] = None

    def __post_init__(self):
        if self.R < 1:
            raise GbcalError("R must be >= 1")
        if self.burn_in < 0:
            raise GbcalError("burn_in must be >= 0")
        if self.thin < 1:
            raise GbcalError("thin must be >= 1")
        if self.backend not in ("metropolis", "bootstrap"):
            raise GbcalError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class PosteriorDraws:
    omega: float
    alpha: np.ndarray
    lam: np.ndarray
    theta1: np.ndarray
    theta0: np.ndarray
    acceptance_rate: float
    n_clamped: int
    scores: Optional[np.ndarray] = None  # n x R
    backend: str = "metropolis"

    @property
    def tau(self) -> np.ndarray:
        return self.theta1 - self.theta0

    @property
    def R(self) -> int:
        return self.lam.shape[0]


def log_unnorm_posterior_alpha(alpha, lam: float, omega: float, dataset: Dataset,
                               basis: BalanceBasis, priors: Priors = Priors()) -> float:
    """Log joint density of (alpha, lambda) up to a constant.

    ``-omega * loss + L log(lambda/2) - lambda ||alpha||_1
    + (a-1) log(lambda) - b lambda``; the intercept has a flat prior.
    """
    if not lam > 0:
        raise GbcalError("lambda must be positive")
    if omega < 0:
        raise GbcalError("omega must be nonnegative")
    alpha = np.asarray(alpha, dtype=float)
    L = alpha.shape[0] - 1
    G = design(dataset, basis)
    loss = calibration_loss_G(alpha, G, dataset.A) if omega > 0 else 0.0
    a, b = priors.lambda_shape, priors.lambda_rate
    return (-omega * loss + L * np.log(lam / 2) - lam * l1_norm(alpha)
            + (a - 1) * np.log(lam) - b * lam)


def gibbs_lambda(alpha, priors: Priors, rng: np.random.Generator) -> float:
    """Draw lambda | alpha ~ Gamma(a + L, rate b + ||alpha[1:]||_1)."""
    alpha = np.asarray(alpha, dtype=float)
    if not np.isfinite(alpha).all():
        raise GbcalError("alpha must be finite")
    L = alpha.shape[0] - 1
    shape = priors.lambda_shape + L
    rate = priors.lambda_rate + l1_norm(alpha)
    return float(rng.gamma(shape, 1.0 / rate))


class _CalibrationLoss:
    """Fast evaluation of the calibration loss on a fixed design."""

    def __init__(self, G, A, weights=None):
        self.G, self.A = G, A
        self.weights = weights
        w = np.ones(G.shape[0]) if weights is None else weights
        t = A == 1
        self.G1, self.G0 = G[t], G[~t]
        self.w1, self.w0 = w[t], w[~t]
        self.lin = G.T @ (w * (1.0 - 2.0 * A))

    def __call__(self, alpha) -> float:
        e1 = self.G1 @ alpha
        e0 = self.G0 @ alpha
        if (e1.size and np.abs(e1).max() > ETA_CLAMP) or \
                (e0.size and np.abs(e0).max() > ETA_CLAMP):
            return calibration_loss_G(alpha, self.G, self.A, self.weights)
        return float(self.w1 @ np.exp(-e1) + self.w0 @ np.exp(e0) + self.lin @ alpha)


def _initial_alpha(G, A, omega, lam0, opts: McmcOptions):
    if opts.alpha_init is not None:
        alpha = np.asarray(opts.alpha_init, dtype=float)
        if alpha.shape != (G.shape[1],):
            raise GbcalError("alpha_init has the wrong dimension")
        return alpha.copy()
    n = G.shape[0]
    lam_rcal = lam0 / (n * omega) if omega > 0 else np.inf
    if not np.isfinite(lam_rcal) or lam_rcal > 1e6:
        lam_rcal = 1e6
    try:
        alpha, _, _ = rcal_path(G, A, lam_rcal,
                                SolverOptions(max_iter=5000, tol_grad=1e-6))
    except ConvergenceError as exc:
        alpha = exc.alpha if exc.alpha is not None else np.zeros(G.shape[1])
    return alpha


def _metropolis_within_gibbs(G, A, omega, priors: Priors, opts: McmcOptions):
    d = G.shape[1]
    L = d - 1
    a, b = priors.lambda_shape, priors.lambda_rate
    rng = np.random.default_rng(opts.seed)
    lam = float(opts.lambda_init) if opts.lambda_init is not None else a / b
    alpha = _initial_alpha(G, A, omega, lam, opts)
    loss = _CalibrationLoss(G, A)

    # Laplace-approximation start for the proposal covariance.
    prec = omega * calibration_hess_G(alpha, G, A)
    prec[np.diag_indices(d)] += np.r_[1e-2, np.full(L, lam ** 2 / 2 + 1e-2)]
    try:
        cov = np.linalg.inv(prec)
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.eye(d)
    base = 2.38 / np.sqrt(d) if opts.proposal_scale is None else opts.proposal_scale
    log_scale = np.log(base) if base > 0 else -np.inf

    total = opts.burn_in + opts.R * opts.thin
    z = rng.standard_normal((total, d))
    logu = np.log(rng.random(total))
    gam = rng.standard_gamma(a + L, total)

    out_alpha = np.empty((opts.R, d))
    out_lam = np.empty(opts.R)
    cur_loss = loss(alpha)
    cur_l1 = np.abs(alpha[1:]).sum()
    mean = alpha.copy()
    m2 = np.zeros((d, d))
    n_acc_post = 0
    k = 0
    for t in range(total):
        step = np.exp(log_scale) * (chol @ z[t]) if base > 0 else None
        if step is not None:
            prop = alpha + step
            p_loss = loss(prop)
            p_l1 = np.abs(prop[1:]).sum()
            log_r = -omega * (p_loss - cur_loss) - lam * (p_l1 - cur_l1)
            accepted = logu[t] < log_r
            if accepted:
                alpha, cur_loss, cur_l1 = prop, p_loss, p_l1
        else:
            log_r, accepted = 0.0, True
        lam = gam[t] / (b + cur_l1)
        if t < opts.burn_in:
            if opts.adapt and base > 0:
                acc_prob = np.exp(min(0.0, log_r)) if np.isfinite(log_r) else 0.0
                log_scale += (t + 1) ** -0.6 * (acc_prob - opts.target_accept)
                # Welford update of the running covariance
                delta = alpha - mean
                mean = mean + delta / (t + 2)
                m2 += np.outer(delta, alpha - mean)
                if t + 1 >= opts.adapt_start and (t + 1) % 100 == 0:
                    emp = m2 / (t + 1) + 1e-10 * np.eye(d)
                    try:
                        chol = np.linalg.cholesky(emp)
                    except np.linalg.LinAlgError:
                        pass
        else:
            n_acc_post += bool(accepted)
            s = t - opts.burn_in
            if s % opts.thin == 0:
                out_alpha[k] = alpha
                out_lam[k] = lam
                k += 1
    acc = n_acc_post / max(1, total - opts.burn_in)
    if base > 0 and not 0.05 <= acc <= 0.7:
        log.warning("Metropolis acceptance rate %.3f outside [0.05, 0.7] "
                    "(omega=%g)", acc, omega)
    return out_alpha, out_lam, acc


def sample_alpha_lambda(dataset: Dataset, basis: BalanceBasis, omega: float,
                        priors: Priors = Priors(), opts: McmcOptions = McmcOptions()):
    """Step 1: draws of (alpha, lambda) from the generalized posterior.

    Returns ``(alpha_draws, lambda_draws, acceptance_rate)``.  Adaptation of
    the proposal (Robbins-Monro scale toward the target acceptance rate plus
    the empirical covariance) runs during burn-in only.
    """
    if not omega > 0:
        raise GbcalError("omega must be positive")
    dataset.check_arms()
    G = design(dataset, basis)
    return _metropolis_within_gibbs(G, dataset.A, omega, priors, opts)


def bootstrap_alpha(dataset: Dataset, basis: BalanceBasis, omega=None,
                    priors: Priors = Priors(), opts: McmcOptions = McmcOptions(),
                    rng=None, tol: float = 1e-7):
    """Loss-likelihood bootstrap alternative to :func:`sample_alpha_lambda`.

    Each draw minimizes ``sum_i w_i * loss_i(alpha) + lambda ||alpha||_1``
    with ``w ~ n * Dirichlet(1, ..., 1)`` and ``lambda`` drawn from its Gamma
    full conditional at the previous ``alpha``.  ``omega`` is ignored.  This
    is an approximation to the generalized posterior, not an exact sampler.
    """
    dataset.check_arms()
    G = design(dataset, basis)
    n = dataset.n
    rng = np.random.default_rng(opts.seed) if rng is None else rng
    d = G.shape[1]
    alpha = np.zeros(d)
    out_alpha = np.empty((opts.R, d))
    out_lam = np.empty(opts.R)
    sopts = SolverOptions(tol_grad=tol)
    for r in range(opts.R):
        lam = gibbs_lambda(alpha, priors, rng)
        w = rng.dirichlet(np.ones(n)) * n
        alpha, _, _ = rcal_path(G, dataset.A, lam / n, sopts, weights=w,
                                alpha0=alpha)
        out_alpha[r] = alpha
        out_lam[r] = lam
    return out_alpha, out_lam, 1.0


def theta_posterior(k: int, e, omega: float, mu: float, tau: float, dataset: Dataset):
    """Normal generalized-posterior mean and precision of arm mean ``k``.

    ``e`` may be a vector (one propensity per unit) or an n x R matrix; the
    result then has one entry per column.
    """
    A = dataset.A
    Y = dataset.Y
    in_arm = A == k
    if not in_arm.any():
        raise GbcalError(f"empty arm: no units with A={k}")
    e = np.asarray(e, dtype=float)
    Ae = A if e.ndim == 1 else A[:, None]
    s = 2.0 * arm_weights(k, e, Ae)
    ssum = s.sum(axis=0)
    sy = Y @ s if e.ndim > 1 else s @ Y
    tau_post = tau + omega * ssum
    mu_post = (tau * mu + omega * sy) / tau_post
    return mu_post, tau_post


def sample_theta(k: int, alpha_draw, omega: float, priors: Priors, dataset: Dataset,
                 basis: BalanceBasis, rng: np.random.Generator) -> float:
    """Step 2: one exact draw of theta_k given a propensity draw."""
    mu, tau = priors.theta_prior(k)
    e = expit(design(dataset, basis) @ np.asarray(alpha_draw, dtype=float))
    m, p = theta_posterior(k, e, omega, mu, tau, dataset)
    return float(rng.normal(m, 1.0 / np.sqrt(p)))


def score_matrix(alpha_draws, theta1, theta0, G, A, Y) -> np.ndarray:
    """Per-observation, per-draw score: minus the sum of the three losses."""
    eta = clamp_eta(G @ np.asarray(alpha_draws).T)  # n x R
    Ac = A[:, None]
    ex = np.exp(eta)
    calib = Ac / ex + (1 - Ac) * ex + (1 - 2 * Ac) * eta
    w1 = Ac * (1 + 1 / ex)
    w0 = (1 - Ac) * (1 + ex)
    Yc = Y[:, None]
    return -(calib + w1 * (Yc - theta1) ** 2 + w0 * (Yc - theta0) ** 2)


def run_two_stage(dataset: Dataset, basis: BalanceBasis, omega: float,
                  priors: Priors = Priors(), opts: McmcOptions = McmcOptions(),
                  keep_scores: bool = True) -> PosteriorDraws:
    """Step 1 then Step 2 for each draw; stores the score matrix for PCIC."""
    if not omega > 0:
        raise GbcalError("omega must be positive")
    dataset.check_arms()
    G = design(dataset, basis)
    if opts.backend == "metropolis":
        alpha, lam, acc = _metropolis_within_gibbs(G, dataset.A, omega, priors, opts)
    else:
        alpha, lam, acc = bootstrap_alpha(dataset, basis, omega, priors, opts)
    eta = G @ alpha.T
    n_clamped = count_clamped(eta)
    e = expit(eta)
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed, spawn_key=(1,)))
    thetas = []
    for k in (1, 0):
        mu, tau = priors.theta_prior(k)
        m, p = theta_posterior(k, e, omega, mu, tau, dataset)
        thetas.append(m + rng.standard_normal(m.shape[0]) / np.sqrt(p))
    theta1, theta0 = thetas
    scores = (score_matrix(alpha, theta1, theta0, G, dataset.A, dataset.Y)
              if keep_scores else None)
    return PosteriorDraws(float(omega), alpha, lam, theta1, theta0, acc,
                          n_clamped, scores, opts.backend)


def batch_means_se(x, n_batches: int = 50) -> float:
    """Monte Carlo standard error of the mean of a correlated chain."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0] // n_batches
    if m < 1:
        raise GbcalError("chain too short for batch means")
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
