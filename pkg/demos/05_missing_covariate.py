"""IPW when one covariate is missing at random.

X1 is unobserved for some units.  The observation model uses only X2; the
treatment model uses (X1, X2) on observed rows.  Units are weighted by
1 / (e_R * e_A).

Run: python demos/05_missing_covariate.py
"""
import numpy as np

from gbcal.basis import Dataset, build_balance_basis
from gbcal.estimators import ipw_estimate
from gbcal.missing import fit_missing, ipw_missing, ipw_missing_se, simulate_mar
from gbcal.optimize import fit_cbps_exact

ds, truth = simulate_mar(20000, np.random.default_rng(5))
print(f"n={ds.n}, X1 observed for {int(ds.R.sum())} units")

g1 = build_balance_basis(ds.X, [("raw", 1)])  # X2 only
g2 = build_balance_basis(ds.X, [0, 1])        # X1 and X2
fit = fit_missing(ds, g1, g2)

G1 = g1.transform(ds.X)
print("calibration identity residual:", np.abs((ds.R / fit.e_R) @ G1 - G1.sum(axis=0)).max())

est = ipw_missing(fit.e_R, fit.e_A, ds)
se = ipw_missing_se(fit.e_R, fit.e_A, ds)
print(f"E[Y1]: estimate {est:.4f} (SE {se:.4f}), truth {truth}")

# Dropping the incomplete rows and ignoring why they are missing:
cc = ds.R == 1
sub = Dataset(ds.Y[cc], ds.A[cc], ds.X[cc])
b = build_balance_basis(sub.X, [0, 1])
naive = ipw_estimate(fit_cbps_exact(sub, b).e, sub).theta1
print(f"complete-case estimate {naive:.4f}")
