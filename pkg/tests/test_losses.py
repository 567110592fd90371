import numpy as np
import pytest

from gbcal.basis import Dataset, GbcalError, build_balance_basis, expit
from gbcal.estimators import ipw_estimate
from gbcal.losses import (balance_vector, grad_calibration, loss_calibration,
                          loss_outcome, penalty_l1)
from gbcal.optimize import fit_cbps_exact

from conftest import random_dataset, raw_basis


def brute_calibration(alpha, G, A):
    total = 0.0
    for g, a in zip(G, A):
        eta = sum(ai * gi for ai, gi in zip(alpha, g))
        if a == 1:
            total += np.exp(-eta) - eta
        else:
            total += eta + np.exp(eta)
    return total


def test_loss_at_zero_is_n(small):
    ds, b = small
    assert loss_calibration(np.zeros(b.dim), ds, b).total == pytest.approx(ds.n)


def test_loss_single_unit():
    ds = Dataset([0.0, 0.0], [1.0, 1.0], [[1.0], [1.0]])
    b = build_balance_basis(ds.X, [0], standardize=False)
    val = loss_calibration([0.0, np.log(2.0)], ds, b).per_obs[0]
    assert val == pytest.approx(0.5 - np.log(2.0), abs=1e-12)
    assert val == pytest.approx(-0.19315, abs=1e-5)


def test_loss_matches_brute_force(rng):
    for _ in range(5):
        ds = random_dataset(rng, n=15, p=2)
        b = raw_basis(ds)
        alpha = rng.standard_normal(b.dim)
        lv = loss_calibration(alpha, ds, b)
        assert lv.total == pytest.approx(brute_calibration(alpha, b.transform(ds.X), ds.A),
                                         rel=1e-12)
        assert lv.total == pytest.approx(lv.per_obs.sum(), rel=1e-9)


def test_grad_at_zero(small):
    ds, b = small
    G = b.transform(ds.X)
    expected = (2 * (1 - 2 * ds.A)) @ G
    np.testing.assert_allclose(grad_calibration(np.zeros(b.dim), ds, b), expected,
                               rtol=1e-12, atol=1e-12)


def test_grad_per_treated_unit():
    # each treated unit contributes -1/0.5 = -2 to the intercept gradient
    b = build_balance_basis(np.zeros((2, 1)), [])
    treated = Dataset([0.0, 0.0], [1.0, 1.0], [[1.0], [2.0]])
    assert grad_calibration([0.0], treated, b)[0] == pytest.approx(-4.0)
    mixed = Dataset([0.0, 0.0], [1.0, 0.0], [[1.0], [2.0]])
    assert grad_calibration([0.0], mixed, b)[0] == pytest.approx(0.0)


def test_grad_finite_difference(rng):
    ds = random_dataset(rng, n=40, p=3)
    b = raw_basis(ds)
    h = 1e-6
    for _ in range(10):
        alpha = 0.5 * rng.standard_normal(b.dim)
        g = grad_calibration(alpha, ds, b)
        fd = np.array([(loss_calibration(alpha + h * e, ds, b).total
                        - loss_calibration(alpha - h * e, ds, b).total) / (2 * h)
                       for e in np.eye(b.dim)])
        assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-6


def test_balance_identity(small, rng):
    ds, b = small
    for _ in range(5):
        alpha = rng.standard_normal(b.dim)
        rep = balance_vector(alpha, ds, b)
        assert np.array_equal(rep.raw, -grad_calibration(alpha, ds, b))
        assert np.array_equal(rep.normalized, rep.raw / ds.n)


def test_balance_toy():
    ds = Dataset([0.0, 0.0], [1.0, 0.0], [[1.0], [1.0]])
    b = build_balance_basis(ds.X, [], standardize=False)
    assert balance_vector([0.0], ds, b).raw[0] == 0.0


def test_balance_zero_at_cbps(small):
    ds, b = small
    fit = fit_cbps_exact(ds, b)
    assert np.abs(balance_vector(fit.alpha, ds, b).normalized).max() < 1e-8


def test_convexity(small, rng):
    ds, b = small
    f = lambda a: loss_calibration(a, ds, b).total
    for _ in range(50):
        a1, a2 = rng.standard_normal((2, b.dim))
        t = rng.random()
        assert f(t * a1 + (1 - t) * a2) <= t * f(a1) + (1 - t) * f(a2) + 1e-9


def test_outcome_loss_example():
    ds = Dataset([1.0, 3.0, 9.0], [1.0, 1.0, 0.0], [[0.0], [1.0], [2.0]])
    b = build_balance_basis(ds.X, [])
    assert loss_outcome(1, 2.0, [0.0], ds, b).total == pytest.approx(4.0)


def test_outcome_loss_empty_arm():
    ds = Dataset([1.0, 3.0], [1.0, 1.0], [[0.0], [1.0]])
    b = build_balance_basis(ds.X, [0])
    with pytest.raises(GbcalError, match="empty arm"):
        loss_outcome(0, 0.0, [0.0, 0.0], ds, b)


def test_outcome_minimizer_is_hajek_mean(small, rng):
    ds, b = small
    alpha = 0.3 * rng.standard_normal(b.dim)
    e = expit(b.transform(ds.X) @ alpha)
    est = ipw_estimate(e, ds)
    for k, th in ((1, est.theta1), (0, est.theta0)):
        # quadratic in theta: fit the parabola through three points
        vals = [loss_outcome(k, th + d, alpha, ds, b).total for d in (-1.0, 0.0, 1.0)]
        vertex = th + 0.5 * (vals[0] - vals[2]) / (vals[0] - 2 * vals[1] + vals[2])
        assert vertex == pytest.approx(th, abs=1e-10)
        # brute-force sum oracle
        w = ds.A / e if k == 1 else (1 - ds.A) / (1 - e)
        assert vals[1] == pytest.approx(sum(wi * (y - th) ** 2 for wi, y in zip(w, ds.Y)),
                                        rel=1e-12)


def test_penalty_examples():
    assert penalty_l1([3.0, 0.0, 0.0], 7.0) == 0.0
    assert penalty_l1([0.0, 1.0, -2.0], 0.5) == 1.5
    assert penalty_l1([5.0, 1.0, -2.0], 0.0) == 0.0
    with pytest.raises(GbcalError):
        penalty_l1([0.0, 1.0], -0.1)
