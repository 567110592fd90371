"""The calibration loss, its gradient and what the L1 penalty buys.

Run: python demos/01_losses_and_balance.py
"""
import numpy as np

from gbcal.losses import balance_vector, grad_calibration, loss_calibration
from gbcal.optimize import check_kkt, fit_cbps_exact, fit_logistic_mle, fit_rcal
from gbcal.simulate import adjustment_basis, gen_dataset

rng = np.random.default_rng(1)
ds = gen_dataset(500, "a", rng)
basis = adjustment_basis(ds.X, "confounders")  # intercept + standardized X1..X4
print(f"n={ds.n}, treated={int(ds.A.sum())}, basis columns={basis.dim}")

# At alpha = 0 every unit contributes exactly 1 to the loss.
zero = np.zeros(basis.dim)
print("loss at alpha=0:", loss_calibration(zero, ds, basis).total)

# The gradient is minus the (unnormalized) balance vector.
g = grad_calibration(zero, ds, basis)
print("gradient == -balance:", np.array_equal(g, -balance_vector(zero, ds, basis).raw))

# Exact balance (CBPS) versus the MLE.
cbps = fit_cbps_exact(ds, basis)
mle = fit_logistic_mle(ds, basis)
print("normalized balance, CBPS:", np.round(balance_vector(cbps.alpha, ds, basis).normalized, 10))
print("normalized balance, MLE :", np.round(balance_vector(mle.alpha, ds, basis).normalized, 4))

# The penalty weight bounds the imbalance of every penalized column.
for lam in (0.01, 0.05, 0.10):
    fit = fit_rcal(ds, basis, lam)
    bal = balance_vector(fit.alpha, ds, basis).normalized[1:]
    kkt = check_kkt(fit, ds, basis, lam)
    print(f"lambda={lam:.2f}  max|balance|={np.abs(bal).max():.4f}  "
          f"nonzero coefs={int((fit.alpha[1:] != 0).sum())}  KKT ok={kkt.satisfied}")
