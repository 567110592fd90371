"""Point estimators of the propensity coefficients.

* :func:`fit_rcal` -- L1-penalized calibration (proximal gradient).
* :func:`fit_cbps_exact` -- exact first-order balance (damped Newton).
* :func:`fit_logistic_mle` -- ordinary logistic regression (Newton).

The RCAL objective is ``(1/n) * loss + lam * ||alpha[1:]||_1`` so that ``lam``
bounds the normalized balance of every penalized column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import BalanceBasis, Dataset, GbcalError, PropensityFit, expit
from .losses import (balance_vector, calibration_grad_G, calibration_hess_G,
                     calibration_loss_G, design)

# ||alpha||_inf beyond this is treated as divergence (perfect separation).
_DIVERGENCE_NORM = 50.0


class ConvergenceError(RuntimeError):
    """A fitter did not reach its optimality tolerance."""

    def __init__(self, msg, alpha=None, violation=None):
        super().__init__(msg)
        self.alpha = alpha
        self.violation = violation


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 10000
    tol_grad: float = 1e-8
    step_init: float = 1.0
    backtrack: float = 0.5
    step_growth: float = 1.5
    seed: Optional[int] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise GbcalError("max_iter must be >= 1")
        if not self.tol_grad > 0:
            raise GbcalError("tol_grad must be positive")
        if not 0 < self.backtrack < 1:
            raise GbcalError("backtrack must lie in (0, 1)")


@dataclass(frozen=True)
class KktReport:
    residuals: np.ndarray
    active: np.ndarray
    max_violation: float
    satisfied: bool


def _soft(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def kkt_residuals(grad, alpha, lam) -> np.ndarray:
    """Per-coordinate subgradient residuals of ``f + lam*||alpha[1:]||_1``."""
    r = np.empty_like(grad)
    r[0] = abs(grad[0])
    g, a = grad[1:], alpha[1:]
    active = a != 0
    r[1:] = np.where(active, np.abs(g + lam * np.sign(a)),
                     np.maximum(np.abs(g) - lam, 0.0))
    return r


def rcal_path(G, A, lam, opts: SolverOptions, weights=None, alpha0=None):
    """ISTA with backtracking on the normalized penalized calibration loss.

    Returns ``(alpha, n_iter, objective_trace)``.  ``weights`` (mean one)
    reweight observations, as in the loss-likelihood bootstrap.
    """
    n = G.shape[0]
    alpha = np.zeros(G.shape[1]) if alpha0 is None else np.array(alpha0, float)

    def smooth(a):
        return calibration_loss_G(a, G, A, weights) / n

    def grad(a):
        return calibration_grad_G(a, G, A, weights) / n

    f, g = smooth(alpha), grad(alpha)
    trace = [f + lam * np.abs(alpha[1:]).sum()]
    t = opts.step_init
    for it in range(opts.max_iter):
        viol = kkt_residuals(g, alpha, lam).max()
        if viol <= opts.tol_grad:
            return alpha, it, trace
        while True:
            z = alpha - t * g
            z[1:] = _soft(z[1:], t * lam)
            d = z - alpha
            fz = smooth(z)
            if fz <= f + g @ d + (d @ d) / (2 * t) + 1e-15 * abs(f):
                break
            t *= opts.backtrack
            if t < 1e-20:
                raise ConvergenceError("step size underflow", alpha, viol)
        alpha, f, g = z, fz, grad(z)
        trace.append(f + lam * np.abs(alpha[1:]).sum())
        if np.abs(alpha).max() > _DIVERGENCE_NORM:
            raise ConvergenceError("coefficients diverging (separation?)",
                                   alpha, viol)
        t *= opts.step_growth
    viol = kkt_residuals(g, alpha, lam).max()
    if viol <= opts.tol_grad:
        return alpha, opts.max_iter, trace
    raise ConvergenceError(
        f"fit_rcal did not converge in {opts.max_iter} iterations "
        f"(KKT violation {viol:.3g})", alpha, viol)


def fit_rcal(dataset: Dataset, basis: BalanceBasis, lam: float,
             opts: SolverOptions = SolverOptions(), weights=None,
             alpha0=None) -> PropensityFit:
    """Penalized calibration fit; see module docstring for the scaling."""
    if lam < 0:
        raise GbcalError(f"lambda must be nonnegative, got {lam}")
    dataset.check_arms()
    G = design(dataset, basis)
    alpha, n_iter, trace = rcal_path(G, dataset.A, lam, opts, weights, alpha0)
    return PropensityFit.from_alpha(alpha, G, lam, "rcal", n_iter=n_iter,
                                    info={"objective": trace})


def _newton(fun, grad, hess, x0, n, opts: SolverOptions, name: str):
    """Damped Newton on a smooth convex function; residual is max|grad|/n."""
    x = x0.copy()
    fx, gx = fun(x), grad(x)
    for it in range(opts.max_iter):
        viol = np.abs(gx).max() / n
        if viol <= opts.tol_grad:
            # one polishing step; keep it only if it helps
            try:
                step = np.linalg.solve(hess(x), gx)
            except np.linalg.LinAlgError:
                return x, it
            z = x - step
            gz = grad(z)
            if np.abs(gz).max() < np.abs(gx).max():
                x = z
            return x, it
        try:
            step = np.linalg.solve(hess(x), gx)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"{name}: singular Hessian", x, viol) from exc
        t = 1.0
        dec = gx @ step
        while True:
            z = x - t * step
            fz = fun(z)
            if np.isfinite(fz) and fz <= fx - 1e-4 * t * dec:
                break
            t *= 0.5
            if t < 1e-12:
                # no further decrease possible in floating point
                if viol <= 1e3 * opts.tol_grad:
                    return x, it
                raise ConvergenceError(f"{name}: line search failed", x, viol)
        x, fx, gx = z, fz, grad(z)
        if np.abs(x).max() > _DIVERGENCE_NORM:
            raise ConvergenceError(
                f"{name}: coefficients diverging (perfect separation?)", x, viol)
    raise ConvergenceError(f"{name}: no convergence in {opts.max_iter} "
                           "iterations", x, np.abs(gx).max() / n)


def fit_cbps_exact(dataset: Dataset, basis: BalanceBasis,
                   opts: SolverOptions = SolverOptions(),
                   alpha0=None) -> PropensityFit:
    """Just-identified covariate balancing fit: balance vector = 0."""
    dataset.check_arms()
    G = design(dataset, basis)
    A = dataset.A
    x0 = np.zeros(G.shape[1]) if alpha0 is None else np.array(alpha0, float)
    alpha, n_iter = _newton(lambda a: calibration_loss_G(a, G, A),
                            lambda a: calibration_grad_G(a, G, A),
                            lambda a: calibration_hess_G(a, G, A),
                            x0, dataset.n, opts, "fit_cbps_exact")
    return PropensityFit.from_alpha(alpha, G, 0.0, "cbps", n_iter=n_iter)


def _logistic_nll(a, G, A):
    eta = G @ a
    return float(np.sum(np.logaddexp(0.0, eta) - A * eta))


def fit_logistic_mle(dataset: Dataset, basis: BalanceBasis,
                     opts: SolverOptions = SolverOptions(),
                     alpha0=None) -> PropensityFit:
    """Maximum-likelihood logistic regression of A on g(X)."""
    dataset.check_arms()
    G = design(dataset, basis)
    A = dataset.A

    def grad(a):
        return -(G.T @ (A - expit(G @ a)))

    def hess(a):
        p = expit(G @ a)
        return (G * (p * (1 - p))[:, None]).T @ G

    x0 = np.zeros(G.shape[1]) if alpha0 is None else np.array(alpha0, float)
    alpha, n_iter = _newton(lambda a: _logistic_nll(a, G, A), grad, hess, x0,
                            dataset.n, opts, "fit_logistic_mle")
    return PropensityFit.from_alpha(alpha, G, 0.0, "logit", n_iter=n_iter)


def check_kkt(fit: PropensityFit, dataset: Dataset, basis: BalanceBasis,
              lam: float, tol: float = 1e-6) -> KktReport:
    """Verify the subgradient conditions of the RCAL objective at ``fit``.

    On penalized coordinates the normalized balance must not exceed ``lam``,
    and must equal ``lam * sign(alpha_j)`` where ``alpha_j != 0``.
    """
    alpha = np.asarray(fit.alpha, dtype=float)
    grad = -balance_vector(alpha, dataset, basis).normalized
    res = kkt_residuals(grad, alpha, lam)
    active = np.flatnonzero(alpha[1:] != 0) + 1
    worst = float(res.max())
    return KktReport(res, active, worst, worst <= tol)
