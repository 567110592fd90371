"""Calibration losses and IPW when one covariate may be missing at random.

The observation indicator ``R`` is modelled on always-observed covariates
through a one-sided calibration loss; the treatment model uses the basis rows
multiplied by ``R`` so units with a missing covariate contribute a constant.
The arm means are doubly weighted by ``1 / (e_R * e_A)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import BalanceBasis, Dataset, GbcalError, clamp_eta, expit
from .losses import LossValue, calibration_terms
from .optimize import SolverOptions, _newton, rcal_path


@dataclass(frozen=True)
class MissingFit:
    gamma: np.ndarray
    alpha: np.ndarray
    e_R: np.ndarray
    e_A: np.ndarray


def _require_R(dataset: Dataset) -> np.ndarray:
    if dataset.R is None:
        raise GbcalError("dataset has no missingness indicator R")
    return dataset.R


def missing_columns(dataset: Dataset) -> frozenset:
    """Indices of covariate columns that contain NaN."""
    return frozenset(np.flatnonzero(np.isnan(dataset.X).any(axis=0)).tolist())


def design_g1(dataset: Dataset, basis_g1: BalanceBasis,
              missing_col: Optional[int] = None) -> np.ndarray:
    """Basis for the observation model; it must avoid the missing-prone column."""
    _require_R(dataset)
    banned = missing_columns(dataset)
    if missing_col is not None:
        banned = banned | {missing_col}
    bad = basis_g1.covariates_used & banned
    if bad:
        raise GbcalError(f"observation-model basis uses missing-prone column(s) "
                         f"{sorted(bad)}")
    return basis_g1.transform(dataset.X)


def design_g2(dataset: Dataset, basis_g2: BalanceBasis) -> np.ndarray:
    """R_i * g2(X_i); rows with R_i = 0 are exactly zero."""
    R = _require_R(dataset)
    G = basis_g2.transform(dataset.X)
    G = np.where(R[:, None] == 1, G, 0.0)
    return G


def missing_terms(eta, R) -> np.ndarray:
    eta = clamp_eta(eta)
    return R * np.exp(-eta) + (1.0 - R) * eta


def loss_missing(gamma, dataset: Dataset, basis_g1: BalanceBasis,
                 missing_col: Optional[int] = None) -> LossValue:
    """One-sided calibration loss sum_i [R_i e^{-eta_i} + (1 - R_i) eta_i]."""
    G1 = design_g1(dataset, basis_g1, missing_col)
    per_obs = missing_terms(G1 @ np.asarray(gamma, dtype=float), dataset.R)
    return LossValue(float(np.sum(per_obs)), per_obs)


def grad_missing(gamma, dataset: Dataset, basis_g1: BalanceBasis,
                 missing_col: Optional[int] = None) -> np.ndarray:
    G1 = design_g1(dataset, basis_g1, missing_col)
    eta = clamp_eta(G1 @ np.asarray(gamma, dtype=float))
    R = dataset.R
    return G1.T @ (-R * np.exp(-eta) + (1.0 - R))


def loss_treatment_missing(alpha, dataset: Dataset,
                           basis_g2: BalanceBasis) -> LossValue:
    """Calibration loss for A with the basis rows multiplied by R."""
    G2 = design_g2(dataset, basis_g2)
    per_obs = calibration_terms(G2 @ np.asarray(alpha, dtype=float), dataset.A)
    return LossValue(float(np.sum(per_obs)), per_obs)


def fit_missing(dataset: Dataset, basis_g1: BalanceBasis, basis_g2: BalanceBasis,
                lam: float = 0.0, opts: SolverOptions = SolverOptions(),
                missing_col: Optional[int] = None) -> MissingFit:
    """Fit the observation model (exact calibration) and the treatment model.

    ``lam`` is the normalized L1 weight of the treatment model, as in
    :func:`gbcal.optimize.fit_rcal`.  With no missing values the observation
    model is degenerate and ``e_R`` is returned as exactly 1.
    """
    R = _require_R(dataset)
    if not R.any():
        raise GbcalError("no observed units (all R = 0)")
    G1 = design_g1(dataset, basis_g1, missing_col)
    n = dataset.n
    G2 = design_g2(dataset, basis_g2)
    alpha, _, _ = rcal_path(G2, dataset.A, lam, opts)
    if R.all():
        # l_R has no minimizer when nothing is missing; its infimum is e_R = 1,
        # which makes every estimator reduce to the complete-data one.
        return MissingFit(np.zeros(G1.shape[1]), alpha, np.ones(n), expit(G2 @ alpha))

    def f(g):
        return float(np.sum(missing_terms(G1 @ g, R)))

    def grad(g):
        eta = clamp_eta(G1 @ g)
        return G1.T @ (-R * np.exp(-eta) + (1.0 - R))

    def hess(g):
        eta = clamp_eta(G1 @ g)
        return (G1 * (R * np.exp(-eta))[:, None]).T @ G1

    gamma, _ = _newton(f, grad, hess, np.zeros(G1.shape[1]), n, opts,
                       "fit_missing")
    return MissingFit(gamma, alpha, expit(G1 @ gamma), expit(G2 @ alpha))


def ipw_missing(e_R, e_A, dataset: Dataset, arm: int = 1) -> float:
    """Doubly weighted Hajek mean of arm ``arm`` among observed units.

    For ``arm=0`` the treatment weight is ``1 - e_A`` (the mirror image of
    the treated-arm estimator).
    """
    R = _require_R(dataset)
    A, Y = dataset.A, dataset.Y
    e_R = np.broadcast_to(np.asarray(e_R, dtype=float), (dataset.n,))
    e_A = np.broadcast_to(np.asarray(e_A, dtype=float), (dataset.n,))
    if arm == 1:
        ind, pa = R * A, e_A
    elif arm == 0:
        ind, pa = R * (1 - A), 1 - e_A
    else:
        raise GbcalError(f"arm must be 0 or 1, got {arm!r}")
    if not ind.any():
        raise GbcalError("empty effective sample: no observed units in the arm")
    w = ind / (e_R * pa)
    return float(np.sum(w * Y) / np.sum(w))


def ipw_missing_se(e_R, e_A, dataset: Dataset, arm: int = 1) -> float:
    """Delta-method standard error of :func:`ipw_missing` with known weights."""
    R = dataset.R
    A, Y = dataset.A, dataset.Y
    ind, pa = (R * A, e_A) if arm == 1 else (R * (1 - A), 1 - np.asarray(e_A))
    w = ind / (np.asarray(e_R) * pa)
    th = np.sum(w * Y) / np.sum(w)
    return float(np.sqrt(np.sum((w * (Y - th)) ** 2)) / np.sum(w))


def simulate_mar(n: int, rng: np.random.Generator):
    """A MAR design with known truth, for checking the missing-data estimator.

    X1 (missing-prone) and X2 are correlated normals; R depends on X2 only,
    A on (X1, X2), and Y1 = 1 + X1 + 0.5 X2 + noise, so E[Y1] = 1.
    Returns ``(dataset, true_mean_Y1)``; X1 is NaN where R = 0.
    """
    x2 = rng.standard_normal(n)
    x1 = 0.5 * x2 + np.sqrt(0.75) * rng.standard_normal(n)
    R = rng.binomial(1, expit(0.8 + 0.7 * x2)).astype(float)
    A = rng.binomial(1, expit(-0.2 + 0.6 * x1 - 0.4 * x2)).astype(float)
    y1 = 1.0 + x1 + 0.5 * x2 + rng.standard_normal(n)
    y0 = x1 - 0.5 * x2 + rng.standard_normal(n)
    Y = A * y1 + (1 - A) * y0
    X = np.column_stack([np.where(R == 1, x1, np.nan), x2])
    return Dataset(Y, A, X, R, names=("X1", "X2")), 1.0
