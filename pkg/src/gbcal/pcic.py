"""Posterior covariance information criterion and learning-rate selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np

from .basis import BalanceBasis, Dataset, GbcalError
from .gbayes import McmcOptions, PosteriorDraws, Priors, run_two_stage, score_matrix
from .losses import design
from .optimize import ConvergenceError

log = logging.getLogger(__name__)

DEFAULT_OMEGA_GRID = (0.2, 0.5, 1.0, 1.5)


@dataclass(frozen=True)
class PcicTable:
    omega: np.ndarray
    pcic: np.ndarray
    selected: np.ndarray  # bool, exactly one True
    criterion: str = "loss"

    @property
    def best(self) -> float:
        return float(self.omega[self.selected][0])

    def rows(self):
        return list(zip(self.omega.tolist(), self.pcic.tolist(),
                        self.selected.tolist()))


def per_obs_score(theta1: float, theta0: float, alpha, dataset: Dataset,
                  basis: BalanceBasis) -> np.ndarray:
    """Score of each observation at one parameter value (minus summed losses)."""
    G = design(dataset, basis)
    alpha = np.asarray(alpha, dtype=float)[None, :]
    return score_matrix(alpha, np.array([theta1]), np.array([theta0]), G,
                        dataset.A, dataset.Y)[:, 0]


def pcic(scores, nu=None) -> float:
    """PCIC from an n x R score matrix.

    ``mean(nu) - mean_i Cov_r(nu_i, s_i)`` with the covariance taken over
    draws using divisor R.  ``nu`` defaults to the scores themselves, in
    which case the correction is the mean posterior variance of the score.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[1] < 1:
        raise GbcalError("scores must be an n x R matrix with R >= 1")
    v = s if nu is None else np.asarray(nu, dtype=float)
    if v.shape != s.shape:
        raise GbcalError("nu must have the same shape as scores")
    mean_v = v.mean(axis=1)
    mean_s = s.mean(axis=1)
    cov = (v * s).mean(axis=1) - mean_v * mean_s
    if s.shape[1] == 1:
        cov = np.zeros_like(cov)
    return float(mean_v.mean() - cov.mean())


def pcic_loss(scores) -> float:
    """PCIC with the loss (negative score) as the evaluation function.

    Equals ``mean posterior loss + mean posterior variance of the loss``;
    smaller is better.  This is ``-pcic(scores)``.
    """
    s = np.asarray(scores, dtype=float)
    return pcic(s, nu=-s)


def select_omega(dataset: Dataset, basis: BalanceBasis, priors: Priors = Priors(),
                 grid: Sequence[float] = DEFAULT_OMEGA_GRID,
                 opts: McmcOptions = McmcOptions(), criterion: str = "loss"
                 ) -> Tuple[float, PcicTable, PosteriorDraws]:
    """Run the two-stage sampler at each learning rate and keep the PCIC minimizer.

    ``criterion="loss"`` evaluates PCIC on the loss scale (see
    :func:`pcic_loss`); ``criterion="score"`` minimizes :func:`pcic` of the
    score literally, which always favours the flattest posterior.  Duplicate
    grid values are merged; ties go to the smaller learning rate.  A learning
    rate whose sampler fails is skipped with a warning.
    """
    if criterion not in ("loss", "score"):
        raise GbcalError(f"unknown criterion {criterion!r}")
    omegas = np.unique(np.asarray(grid, dtype=float))
    if omegas.size == 0 or not (omegas > 0).all():
        raise GbcalError("grid must be a non-empty list of positive values")
    crit = pcic_loss if criterion == "loss" else pcic
    kept, values, draws_by = [], [], []
    for i, omega in enumerate(omegas):
        seed = np.random.SeedSequence(opts.seed, spawn_key=(1000 + i,))
        o = replace(opts, seed=int(seed.generate_state(1)[0]))
        try:
            draws = run_two_stage(dataset, basis, float(omega), priors, o)
        except (ConvergenceError, GbcalError, np.linalg.LinAlgError) as exc:
            log.warning("omega=%g failed: %s", omega, exc)
            continue
        kept.append(omega)
        values.append(crit(draws.scores))
        draws_by.append(draws)
    if not kept:
        raise GbcalError("sampling failed for every learning rate in the grid")
    values = np.array(values)
    best = int(np.argmin(values))  # first minimum = smallest omega on ties
    selected = np.zeros(len(kept), dtype=bool)
    selected[best] = True
    table = PcicTable(np.array(kept), values, selected, criterion)
    return float(kept[best]), table, draws_by[best]
