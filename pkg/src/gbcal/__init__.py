"""Generalized-Bayes inverse probability weighting with covariate-balancing
propensity scores."""

from .basis import (BalanceBasis, Dataset, GbcalError, PropensityFit,
                    build_balance_basis, evaluate_basis, expit, propensity)
from .estimators import (EffectEstimate, MetricsRow, credible_interval,
                         ipw_estimate, metrics, sandwich_ci, smd)
from .gbayes import (McmcOptions, PosteriorDraws, Priors, bootstrap_alpha,
                     gibbs_lambda, log_unnorm_posterior_alpha, run_two_stage,
                     sample_alpha_lambda, sample_theta)
from .losses import (BalanceReport, LossValue, balance_vector, grad_calibration,
                     loss_calibration, loss_outcome, penalty_l1)
from .optimize import (ConvergenceError, KktReport, SolverOptions, check_kkt,
                       fit_cbps_exact, fit_logistic_mle, fit_rcal)
from .missing import (MissingFit, fit_missing, ipw_missing, loss_missing,
                      loss_treatment_missing)
from .pcic import (DEFAULT_OMEGA_GRID, PcicTable, pcic, pcic_loss, per_obs_score,
                   select_omega)

__version__ = "0.1.0"
