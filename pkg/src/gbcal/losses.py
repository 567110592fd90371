"""Calibration and outcome losses, the L1 penalty and the balance vector.

All losses are unnormalized sums over observations.  The linear predictor is
clamped to [-36, 36] before use, so loss, gradient and balance are all
functions of the same clamped quantity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BalanceBasis, Dataset, GbcalError, clamp_eta, expit


@dataclass(frozen=True)
class LossValue:
    total: float
    per_obs: np.ndarray


@dataclass(frozen=True)
class BalanceReport:
    """Raw balance sums and the same divided by n."""

    raw: np.ndarray
    normalized: np.ndarray


def design(dataset: Dataset, basis: BalanceBasis) -> np.ndarray:
    return basis.transform(dataset.X)


def calibration_terms(eta, A) -> np.ndarray:
    """Per-observation calibration loss at linear predictor ``eta``."""
    eta = clamp_eta(eta)
    return A * np.exp(-eta) + (1.0 - A) * eta + (1.0 - A) * np.exp(eta) - A * eta


def balance_weights(eta, A) -> np.ndarray:
    """A/e - (1-A)/(1-e), written through exp(+-eta) for accuracy."""
    eta = clamp_eta(eta)
    return A * (1.0 + np.exp(-eta)) - (1.0 - A) * (1.0 + np.exp(eta))


def calibration_loss_G(alpha, G, A, weights=None) -> float:
    terms = calibration_terms(G @ alpha, A)
    if weights is not None:
        terms = weights * terms
    return float(np.sum(terms))


def calibration_grad_G(alpha, G, A, weights=None) -> np.ndarray:
    b = balance_weights(G @ alpha, A)
    if weights is not None:
        b = weights * b
    return -(G.T @ b)


def calibration_hess_G(alpha, G, A, weights=None) -> np.ndarray:
    eta = clamp_eta(G @ alpha)
    h = A * np.exp(-eta) + (1.0 - A) * np.exp(eta)
    if weights is not None:
        h = weights * h
    return (G * h[:, None]).T @ G


def loss_calibration(alpha, dataset: Dataset, basis: BalanceBasis) -> LossValue:
    """Calibration loss: sum of A e^-eta + (1-A) eta + (1-A) e^eta - A eta."""
    G = design(dataset, basis)
    per_obs = calibration_terms(G @ np.asarray(alpha, dtype=float), dataset.A)
    return LossValue(float(np.sum(per_obs)), per_obs)


def balance_vector(alpha, dataset: Dataset, basis: BalanceBasis) -> BalanceReport:
    G = design(dataset, basis)
    raw = G.T @ balance_weights(G @ np.asarray(alpha, dtype=float), dataset.A)
    return BalanceReport(raw, raw / dataset.n)


def grad_calibration(alpha, dataset: Dataset, basis: BalanceBasis) -> np.ndarray:
    """Analytic gradient of :func:`loss_calibration`; equals ``-balance.raw``."""
    return -balance_vector(alpha, dataset, basis).raw


def arm_weights(k: int, e, A) -> np.ndarray:
    """A/e for k=1 and (1-A)/(1-e) for k=0."""
    if k == 1:
        return A / e
    if k == 0:
        return (1.0 - A) / (1.0 - e)
    raise GbcalError(f"arm must be 0 or 1, got {k!r}")


def outcome_terms(k: int, theta, e, A, Y) -> np.ndarray:
    return arm_weights(k, e, A) * (Y - theta) ** 2


def loss_outcome(k: int, theta: float, alpha, dataset: Dataset,
                 basis: BalanceBasis) -> LossValue:
    """Weighted squared-error loss whose minimizer is the Hajek arm mean."""
    in_arm = dataset.A == k if k in (0, 1) else None
    if in_arm is None:
        raise GbcalError(f"arm must be 0 or 1, got {k!r}")
    if not in_arm.any():
        raise GbcalError(f"empty arm: no units with A={k}")
    e = expit(design(dataset, basis) @ np.asarray(alpha, dtype=float))
    per_obs = outcome_terms(k, theta, e, dataset.A, dataset.Y)
    return LossValue(float(np.sum(per_obs)), per_obs)


def l1_norm(alpha) -> float:
    """||alpha||_1 over penalized coordinates (the intercept is index 0)."""
    return float(np.sum(np.abs(np.asarray(alpha, dtype=float)[1:])))


def penalty_l1(alpha, lam: float) -> float:
    if lam < 0:
        raise GbcalError(f"penalty weight must be nonnegative, got {lam}")
    return lam * l1_norm(alpha)
