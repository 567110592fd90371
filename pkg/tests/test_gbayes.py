import numpy as np
import pytest
from scipy import stats

from gbcal.basis import Dataset, GbcalError, build_balance_basis, expit
from gbcal.estimators import ipw_estimate
from gbcal.gbayes import (McmcOptions, Priors, batch_means_se, bootstrap_alpha,
                          gibbs_lambda, log_unnorm_posterior_alpha, run_two_stage,
                          sample_alpha_lambda, sample_theta, theta_posterior)
from gbcal.losses import calibration_loss_G
from gbcal.optimize import fit_rcal, SolverOptions

from conftest import random_dataset, raw_basis


def three_units():
    ds = Dataset([1.0, 3.0, 9.0], [1.0, 1.0, 0.0], [[0.0], [1.0], [2.0]])
    return ds, build_balance_basis(ds.X, [])  # intercept only, alpha=0 -> e=0.5


def test_log_post_at_zero(small):
    ds, b = small
    lam, omega, pr = 0.7, 1.3, Priors()
    L = b.L
    expected = (-omega * ds.n + L * np.log(lam / 2) + (pr.lambda_shape - 1) * np.log(lam)
                - pr.lambda_rate * lam)
    assert log_unnorm_posterior_alpha(np.zeros(b.dim), lam, omega, ds, b) == \
        pytest.approx(expected, rel=1e-12)


def test_log_post_omega_zero_is_prior(small, rng):
    ds, b = small
    alpha = rng.standard_normal(b.dim)
    lam = 0.4
    prior = (stats.laplace.logpdf(alpha[1:], scale=1 / lam).sum()
             + stats.gamma.logpdf(lam, 0.01, scale=1 / 0.1))
    # equal up to the dropped Gamma normalizing constant
    const = stats.gamma.logpdf(1.0, 0.01, scale=10) - (-0.1)
    val = log_unnorm_posterior_alpha(alpha, lam, 0.0, ds, b)
    assert val + const == pytest.approx(prior, rel=1e-10)


def test_log_post_differences_oracle(small, rng):
    ds, b = small
    G = b.transform(ds.X)
    omega = 0.8

    def oracle(alpha, lam):
        dens = np.exp(-omega * calibration_loss_G(alpha, G, ds.A))
        dens *= np.prod(stats.laplace.pdf(alpha[1:], scale=1 / lam))
        dens *= stats.gamma.pdf(lam, 0.01, scale=10)
        return np.log(dens)

    a1, a2 = 0.2 * rng.standard_normal((2, b.dim))
    d = (log_unnorm_posterior_alpha(a1, 0.5, omega, ds, b)
         - log_unnorm_posterior_alpha(a2, 1.5, omega, ds, b))
    assert d == pytest.approx(oracle(a1, 0.5) - oracle(a2, 1.5), rel=1e-9)


def test_gibbs_lambda_parameters():
    rng = np.random.default_rng(0)
    alpha = np.zeros(5)
    draws = np.array([gibbs_lambda(alpha, Priors(), rng) for _ in range(20000)])
    # Gamma(4.01, rate 0.1)
    assert stats.kstest(draws, stats.gamma(4.01, scale=10).cdf).pvalue > 0.01
    alpha = np.array([9.0, 1.0, -0.5, 0.25, 0.25])  # ||alpha[1:]||_1 = 2
    draws = np.array([gibbs_lambda(alpha, Priors(1.0, 1.0), rng) for _ in range(20000)])
    assert stats.kstest(draws, stats.gamma(5.0, scale=1 / 3).cdf).pvalue > 0.01


def test_gibbs_lambda_moments():
    rng = np.random.default_rng(1)
    alpha = np.array([0.3, 0.5, -1.0, 0.2])
    pr = Priors(0.5, 2.0)
    shape, rate = 0.5 + 3, 2.0 + 1.7
    x = np.array([gibbs_lambda(alpha, pr, rng) for _ in range(100000)])
    m, v = shape / rate, shape / rate ** 2
    assert abs(x.mean() - m) < 3 * np.sqrt(v / x.size)
    # SE of the sample variance for a Gamma: sqrt((mu4 - v^2)/N)
    mu4 = 3 * shape * (shape + 2) / rate ** 4
    assert abs(x.var() - v) < 3 * np.sqrt((mu4 - v ** 2) / x.size)


def test_theta_posterior_hand_arithmetic():
    ds, b = three_units()
    e = np.full(3, 0.5)
    m1, p1 = theta_posterior(1, e, 1.0, 0.0, 1e-4, ds)
    assert p1 == pytest.approx(8.0001, rel=1e-14)
    assert m1 == pytest.approx(16 / 8.0001, rel=1e-14)
    m0, p0 = theta_posterior(0, e, 1.0, 0.0, 1e-4, ds)
    assert p0 == pytest.approx(4.0001, rel=1e-14)
    assert m0 == pytest.approx(36 / 4.0001, rel=1e-14)
    # single treated unit with Y=1
    one = Dataset([1.0, 0.0], [1.0, 0.0], [[0.0], [1.0]])
    m, p = theta_posterior(1, np.full(2, 0.5), 1.0, 0.0, 1e-4, one)
    assert p == pytest.approx(4.0001) and m == pytest.approx(0.99998, abs=1e-5)
    with pytest.raises(GbcalError, match="empty arm"):
        theta_posterior(0, np.full(2, 0.5), 1.0, 0.0, 1e-4,
                        Dataset([1.0, 0.0], [1.0, 1.0], [[0.0], [1.0]]))


def test_theta_prior_recovery():
    # omega -> 0 leaves the prior untouched
    ds, _ = three_units()
    m, p = theta_posterior(1, np.full(3, 0.5), 0.0, 2.5, 0.3, ds)
    assert (m, p) == (2.5, 0.3)


def test_sample_theta_ks(small):
    ds, b = small
    rng = np.random.default_rng(3)
    alpha = np.r_[0.1, -0.2, 0.3, 0.0]
    pr = Priors()
    e = expit(b.transform(ds.X) @ alpha)
    m, p = theta_posterior(1, e, 1.5, 0.0, 1e-4, ds)
    draws = np.array([sample_theta(1, alpha, 1.5, pr, ds, b, rng) for _ in range(10000)])
    assert stats.kstest(draws, stats.norm(m, 1 / np.sqrt(p)).cdf).pvalue > 0.01


def test_point_mass_chain(small):
    ds, b = small
    start = (0.1, 0.2, -0.3, 0.05)
    opts = McmcOptions(R=1, burn_in=0, proposal_scale=0.0, alpha_init=start)
    alpha, lam, _ = sample_alpha_lambda(ds, b, 1.0, Priors(), opts)
    np.testing.assert_array_equal(alpha[0], start)
    opts = McmcOptions(R=20, burn_in=5, proposal_scale=0.0, alpha_init=start)
    alpha, lam, _ = sample_alpha_lambda(ds, b, 1.0, Priors(), opts)
    assert np.all(alpha == np.array(start)) and np.all(lam > 0)


def test_prior_only_sampling():
    # omega ~ 0 and a tight Gamma prior: lambda ~ Gamma(a, b), |alpha_1| | lambda ~ Exp(lambda)
    rng = np.random.default_rng(5)
    ds = random_dataset(rng, n=30, p=1)
    b = raw_basis(ds)
    pr = Priors(100.0, 100.0)
    opts = McmcOptions(R=40000, burn_in=2000, seed=11)
    alpha, lam, _ = sample_alpha_lambda(ds, b, 1e-12, pr, opts)
    assert abs(lam.mean() - 1.0) < 3 * batch_means_se(lam)
    # marginal E|alpha_1| = E[1/lambda] = b / (a - 1)
    a1 = np.abs(alpha[:, 1])
    assert abs(a1.mean() - 100 / 99) < 3 * batch_means_se(a1)


def quadrature_moments(G, A, omega, pr, grid0, grid1):
    """Moments of alpha_1 with lambda integrated out analytically."""
    a0, a1 = np.meshgrid(grid0, grid1, indexing="ij")
    eta = a0[..., None] * G[:, 0] + a1[..., None] * G[:, 1]
    ex = np.exp(eta)
    loss = (A / ex + (1 - A) * ex + (1 - 2 * A) * eta).sum(axis=-1)
    logp = -omega * loss - (pr.lambda_shape + 1) * np.log(pr.lambda_rate + np.abs(a1))
    w = np.exp(logp - logp.max())
    w /= w.sum()
    m1 = (w * a1).sum()
    sd1 = np.sqrt((w * (a1 - m1) ** 2).sum())
    m0 = (w * a0).sum()
    return m0, m1, sd1


def test_metropolis_matches_quadrature():
    rng = np.random.default_rng(8)
    ds = random_dataset(rng, n=40, p=1, coef=1.0)
    b = raw_basis(ds)
    G = b.transform(ds.X)
    pr = Priors(1.0, 1.0)
    omega = 1.0
    opts = McmcOptions(R=20000, burn_in=2000, seed=4)
    alpha, lam, acc = sample_alpha_lambda(ds, b, omega, pr, opts)
    m0, m1, sd1 = quadrature_moments(G, ds.A, omega, pr, np.linspace(-3, 3, 601),
                                     np.linspace(-4, 4, 801))
    x = alpha[:, 1]
    assert abs(x.mean() - m1) < 3 * batch_means_se(x)
    assert abs(alpha[:, 0].mean() - m0) < 3 * batch_means_se(alpha[:, 0])
    sq = (x - x.mean()) ** 2
    assert abs(x.std() - sd1) < 3 * batch_means_se(sq) / (2 * sd1)


def test_map_consistency():
    # omega=1, fixed lambda: posterior mode over alpha = argmin loss + lam ||alpha||_1
    x = np.array([-1.0, -0.3, 0.2, 0.4, 1.1, 1.6])
    ds = Dataset(np.zeros(6), np.array([0, 1, 0, 1, 1, 0], float), x[:, None])
    b = raw_basis(ds)
    lam = 0.6
    fit = fit_rcal(ds, b, lam / ds.n, SolverOptions(tol_grad=1e-9))
    best, arg = -np.inf, None
    for u in np.linspace(-1, 1, 201):
        for v in np.linspace(-1.5, 1.5, 301):
            val = log_unnorm_posterior_alpha([u, v], lam, 1.0, ds, b)
            if val > best:
                best, arg = val, (u, v)
    assert abs(arg[0] - fit.alpha[0]) <= 0.01 and abs(arg[1] - fit.alpha[1]) <= 0.01


def test_two_stage_deterministic(small):
    ds, b = small
    opts = McmcOptions(R=200, burn_in=200, seed=9)
    d1 = run_two_stage(ds, b, 1.0, Priors(), opts)
    d2 = run_two_stage(ds, b, 1.0, Priors(), opts)
    for f in ("alpha", "lam", "theta1", "theta0", "scores"):
        assert np.array_equal(getattr(d1, f), getattr(d2, f))
    assert d1.alpha.shape == (200, b.dim) and d1.scores.shape == (ds.n, 200)
    assert np.all(d1.lam > 0)
    e = expit(b.transform(ds.X) @ d1.alpha.T)
    assert np.all((e > 0) & (e < 1))


def test_fixed_propensity_posterior_mean(small):
    # with known weights the theta posterior mean is the Hajek arm mean
    ds, b = small
    e = np.full(ds.n, 0.4)
    est = ipw_estimate(e, ds)
    m1, _ = theta_posterior(1, e, 1.0, 0.0, 1e-4, ds)
    m0, _ = theta_posterior(0, e, 1.0, 0.0, 1e-4, ds)
    assert m1 - m0 == pytest.approx(est.tau, abs=1e-4)


class _EqualWeights:
    """RNG stand-in: Dirichlet weights all 1/n, lambda fixed."""

    def __init__(self, lam):
        self.lam = lam

    def dirichlet(self, alpha):
        return np.full(len(alpha), 1.0 / len(alpha))

    def gamma(self, shape, scale):
        return self.lam


def test_bootstrap_equal_weights_is_rcal(small):
    ds, b = small
    lam = 2.0
    alpha, lams, _ = bootstrap_alpha(ds, b, priors=Priors(), opts=McmcOptions(R=3),
                                     rng=_EqualWeights(lam), tol=1e-10)
    fit = fit_rcal(ds, b, lam / ds.n, SolverOptions(tol_grad=1e-10))
    np.testing.assert_allclose(alpha, np.tile(fit.alpha, (3, 1)), atol=1e-7)


def test_bootstrap_shrinks_with_n():
    sds = []
    for n in (200, 2000):
        ds = random_dataset(np.random.default_rng(n), n=n, p=2)
        b = raw_basis(ds)
        alpha, _, _ = bootstrap_alpha(ds, b, opts=McmcOptions(R=100, seed=1))
        sds.append(alpha[:, 1].std())
    assert sds[1] < sds[0]


def test_bootstrap_reproducible(small):
    ds, b = small
    o = McmcOptions(R=20, seed=3, backend="bootstrap")
    d1, d2 = run_two_stage(ds, b, 1.0, Priors(), o), run_two_stage(ds, b, 1.0, Priors(), o)
    assert np.array_equal(d1.alpha, d2.alpha) and np.array_equal(d1.tau, d2.tau)


def test_options_validation():
    with pytest.raises(GbcalError):
        McmcOptions(R=0)
    with pytest.raises(GbcalError):
        McmcOptions(backend="nuts")
    with pytest.raises(GbcalError):
        Priors(lambda_shape=0.0)
