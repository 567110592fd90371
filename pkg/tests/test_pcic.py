import sys

import numpy as np
import pytest

from gbcal.basis import Dataset, build_balance_basis
from gbcal.gbayes import McmcOptions, Priors
from gbcal.pcic import pcic, pcic_loss, per_obs_score, select_omega
from gbcal.simulate import adjustment_basis, gen_dataset


def pcic_double_loop(s, nu):
    n, R = s.shape
    total_nu = total_cov = 0.0
    for i in range(n):
        mnu = sum(nu[i, r] for r in range(R)) / R
        ms = sum(s[i, r] for r in range(R)) / R
        mprod = sum(nu[i, r] * s[i, r] for r in range(R)) / R
        total_nu += mnu
        total_cov += mprod - mnu * ms
    return total_nu / n - total_cov / n


def test_matches_double_loop(rng):
    for _ in range(20):
        s = rng.standard_normal((20, 50))
        assert pcic(s) == pytest.approx(pcic_double_loop(s, s), abs=1e-12)
    s = rng.standard_normal((3, 4))
    assert pcic(s) == pytest.approx(pcic_double_loop(s, s), abs=1e-12)
    assert pcic_loss(s) == pytest.approx(pcic_double_loop(s, -s), abs=1e-12)


def test_single_draw_and_constant(rng):
    s = rng.standard_normal((7, 1))
    assert pcic(s) == s.mean()
    c = np.tile(rng.standard_normal((5, 1)), (1, 9))
    assert pcic(c) == pytest.approx(c.mean(), abs=1e-14)


def test_permutation_and_duplication_invariance(rng):
    s = rng.standard_normal((10, 30))
    v = pcic(s)
    assert pcic(s[rng.permutation(10)][:, rng.permutation(30)]) == pytest.approx(v, abs=1e-12)
    assert pcic(np.hstack([s, s])) == pytest.approx(v, abs=1e-12)
    assert v <= s.mean() + 1e-15


def test_per_obs_score_examples():
    ds = Dataset(np.zeros(4), [1.0, 0.0, 1.0, 0.0], np.arange(4.0)[:, None])
    b = build_balance_basis(ds.X, [0])
    np.testing.assert_allclose(per_obs_score(0.0, 0.0, np.zeros(2), ds, b), -1.0)
    shifted = Dataset(ds.Y + 3.0, ds.A, ds.X)
    alpha = np.array([0.2, -0.4])
    np.testing.assert_allclose(per_obs_score(0.5, -1.0, alpha, ds, b),
                               per_obs_score(3.5, 2.0, alpha, shifted, b), atol=1e-12)


def test_per_obs_score_oracle(small, rng):
    ds, b = small
    alpha = 0.3 * rng.standard_normal(b.dim)
    G = b.transform(ds.X)
    out = per_obs_score(0.7, 0.1, alpha, ds, b)
    for i in range(ds.n):
        eta = float(G[i] @ alpha)
        e = 1 / (1 + np.exp(-eta))
        a, y = ds.A[i], ds.Y[i]
        la = a * np.exp(-eta) + (1 - a) * eta + (1 - a) * np.exp(eta) - a * eta
        l1 = a / e * (y - 0.7) ** 2
        l0 = (1 - a) / (1 - e) * (y - 0.1) ** 2
        assert out[i] == pytest.approx(-(la + l1 + l0), rel=1e-12)


FAST = McmcOptions(R=200, burn_in=200, seed=2)


def test_select_single_and_duplicates(small):
    ds, b = small
    w, table, draws = select_omega(ds, b, Priors(), [0.5], FAST)
    assert w == 0.5 and table.selected.tolist() == [True] and draws.omega == 0.5
    w, table, _ = select_omega(ds, b, Priors(), [1.0, 0.5, 1.0], FAST)
    assert table.omega.tolist() == [0.5, 1.0]
    assert table.selected.sum() == 1
    assert table.pcic[table.selected][0] == table.pcic.min()


def test_select_default_grid_scenario_a():
    ds = gen_dataset(500, "a", np.random.default_rng(0))
    b = adjustment_basis(ds.X, "confounders")
    w, table, draws = select_omega(ds, b, opts=McmcOptions(R=300, burn_in=300))
    assert table.omega.tolist() == [0.2, 0.5, 1.0, 1.5]
    assert table.selected.sum() == 1 and w == table.best
    assert draws.omega == w


def test_tie_goes_to_smaller_omega(monkeypatch, small):
    mod = sys.modules["gbcal.pcic"]
    ds, b = small
    monkeypatch.setattr(mod, "pcic_loss", lambda s: 1.0)
    w, table, _ = select_omega(ds, b, grid=[1.5, 0.2, 1.0], opts=FAST)
    assert w == 0.2


def test_failed_omega_skipped(monkeypatch, small):
    mod = sys.modules["gbcal.pcic"]
    from gbcal.basis import GbcalError
    ds, b = small
    real = mod.run_two_stage

    def flaky(dataset, basis, omega, priors, opts):
        if omega == 0.5:
            raise GbcalError("boom")
        return real(dataset, basis, omega, priors, opts)

    monkeypatch.setattr(mod, "run_two_stage", flaky)
    w, table, _ = select_omega(ds, b, grid=[0.5, 1.0], opts=FAST)
    assert table.omega.tolist() == [1.0]
    with pytest.raises(GbcalError, match="every learning rate"):
        select_omega(ds, b, grid=[0.5], opts=FAST)
