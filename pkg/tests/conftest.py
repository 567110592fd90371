import numpy as np
import pytest

from gbcal.basis import Dataset, build_balance_basis


def random_dataset(rng, n=60, p=3, coef=0.6):
    """Gaussian covariates, logistic treatment, continuous outcome."""
    X = rng.standard_normal((n, p))
    beta = coef * rng.standard_normal(p)
    A = (rng.random(n) < 1 / (1 + np.exp(-(X @ beta)))).astype(float)
    A[:2] = (1.0, 0.0)  # both arms always present
    Y = 1.0 + X @ np.ones(p) + A + rng.standard_normal(n)
    return Dataset(Y, A, X)


def raw_basis(ds):
    return build_balance_basis(ds.X, list(range(ds.p)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small(rng):
    ds = random_dataset(rng, n=80, p=3)
    return ds, raw_basis(ds)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
