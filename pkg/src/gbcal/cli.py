"""Command-line entry point: ``gbcal {estimate,simulate,diagnose,oracle-ate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .basis import Dataset, GbcalError, build_balance_basis, expit
from .estimators import credible_interval, ipw_weights, smd
from .gbayes import McmcOptions, Priors, run_two_stage
from .io import (Config, load_config, load_csv, smoke_dataset_path, write_csv,
                 write_manifest)
from .optimize import ConvergenceError, fit_cbps_exact, fit_logistic_mle, fit_rcal
from .pcic import select_omega
from .simulate import StudyConfig, default_workers, run_study, true_ate_oracle

log = logging.getLogger("gbcal")

SMOKE_COVARIATES = ("X1", "X2", "X3", "X4")


def _load_data(cfg: Config) -> Dataset:
    d = cfg.data
    if d.path:
        if not d.covariates:
            raise GbcalError("[data] covariates must list at least one column")
        return load_csv(cfg.resolve(d.path), d.outcome, d.treatment, d.covariates,
                        d.missing or None)
    cov = d.covariates or SMOKE_COVARIATES
    return load_csv(smoke_dataset_path(), "Y", "A", cov)


def _basis(cfg: Config, ds: Dataset):
    p = ds.p
    spec = [("raw", j) for j in range(p)]
    if cfg.data.squares:
        spec += [("square", j) for j in range(p)
                 if not np.all(np.isin(ds.X[:, j], (0.0, 1.0)))]
    if cfg.data.interactions:
        spec += [("interaction", j, k) for j in range(p) for k in range(j + 1, p)]
    return build_balance_basis(ds.X, spec, standardize=cfg.data.standardize)


def _priors(cfg: Config) -> Priors:
    pr = cfg.priors
    prec = 1.0 / pr.theta_sd ** 2
    return Priors(pr.lambda_shape, pr.lambda_rate, pr.theta_mean, pr.theta_mean,
                  prec, prec)


def _g(x: float, digits: int = 4) -> str:
    return format(float(x), f".{digits}g")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_estimate(cfg: Config, args) -> int:
    started = datetime.now(timezone.utc)
    ds = _load_data(cfg)
    if ds.R is not None or np.isnan(ds.X).any():
        raise GbcalError("estimate needs fully observed covariates; "
                         "see gbcal.missing for the missing-covariate estimator")
    ds.check_arms()
    basis = _basis(cfg, ds)
    priors = _priors(cfg)
    m = cfg.mcmc
    seed = m.seed if args.seed is None else args.seed
    backend = {"brcal": "metropolis", "bootstrap": "bootstrap"}.get(
        args.method or "", m.backend)
    opts = McmcOptions(R=m.draws, burn_in=m.burn_in, thin=m.thin, seed=seed,
                       backend=backend)
    omega = args.omega if args.omega is not None else (m.omega or None)
    out = _out_dir(args)

    if omega is None:
        omega, table, draws = select_omega(ds, basis, priors, m.omega_grid, opts,
                                           criterion=m.criterion)
        pcic_rows = table.rows()
    else:
        if omega <= 0:
            raise GbcalError("--omega must be positive")
        draws = run_two_stage(ds, basis, omega, priors, opts, keep_scores=False)
        pcic_rows = [(omega, None, True)]
    write_csv(out / "pcic.csv", ("omega", "pcic", "selected"), pcic_rows)

    L = basis.L
    header = ["draw", "lambda"] + [f"alpha_{j}" for j in range(L + 1)] + \
        ["theta1", "theta0", "tau"]
    write_csv(out / "draws.csv", header,
              ([r, draws.lam[r], *draws.alpha[r], draws.theta1[r], draws.theta0[r],
                draws.tau[r]] for r in range(draws.R)))

    G = basis.transform(ds.X)
    e_bar = expit(draws.alpha @ G.T).mean(axis=0)
    labels = basis.labels(ds.names)[1:]
    before = smd(G[:, 1:], ds.A)
    after = smd(G[:, 1:], ds.A, ipw_weights(e_bar, ds.A))
    write_csv(out / "smd.csv", ("covariate", "smd_before", "smd_after"),
              zip(labels, before, after))

    level = m.level
    summary = []
    for name, x in (("theta1", draws.theta1), ("theta0", draws.theta0),
                    ("tau", draws.tau)):
        lo, hi = credible_interval(x, level)
        summary.append((name, float(np.mean(x)), float(np.std(x, ddof=1)), lo, hi))
    write_csv(out / "summary.csv", ("parameter", "mean", "sd", "lower", "upper"),
              summary)

    pr = cfg.priors
    lines = [
        f"gbcal {__version__} estimate",
        f"data: n={ds.n} (treated {int(ds.A.sum())}, control {int(ds.n - ds.A.sum())})",
        f"balance basis ({L} columns): {', '.join(labels)}",
        f"priors: lambda ~ Gam({pr.lambda_shape:g}, {pr.lambda_rate:g}); "
        f"alpha ~ DoubleExponential(0, 1/lambda); "
        f"theta_k ~ N({pr.theta_mean:g}, {pr.theta_sd:g}^2) (prior SD {pr.theta_sd:g})",
    ]
    if len(pcic_rows) > 1 or pcic_rows[0][1] is not None:
        lines.append("PCIC by learning rate (loss scale, smaller is better):"
                     if m.criterion == "loss" else "PCIC by learning rate:")
        for w, v, sel in pcic_rows:
            lines.append(f"  omega={w:<6g} pcic={_g(v)}{'  <- selected' if sel else ''}")
    else:
        lines.append(f"learning rate fixed at omega={omega:g} (PCIC skipped)")
    lines.append(f"sampler: {backend}, R={draws.R} draws after burn-in {opts.burn_in}, "
                 f"acceptance {_g(draws.acceptance_rate, 3)}")
    pct = f"{100 * level:g}%"
    lines.append(f"{'parameter':<10}{'mean':>10}{'sd':>10}{'lower ' + pct:>14}"
                 f"{'upper ' + pct:>14}")
    for name, mu, sd, lo, hi in summary:
        lines.append(f"{name:<10}{_g(mu):>10}{_g(sd):>10}{_g(lo):>14}{_g(hi):>14}")
    lines.append("SMD before -> after (posterior-mean propensity weights):")
    for lab, b, a in zip(labels, before, after):
        lines.append(f"  {lab:<16}{_g(b, 3):>10} -> {_g(a, 3)}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    write_manifest(out / "manifest.json", cfg, "estimate",
                   {"seed": seed, "omega": omega, "backend": backend,
                    "n": ds.n}, started)
    return 0


def _metrics_rows(result):
    for row in result.rows:
        yield (row.scenario, row.method, row.n, 100 * row.bias, 100 * row.rmse,
               row.cp, row.avl, row.br, row.rr, row.replications,
               result.failures.get(row.method, 0))


def cmd_simulate(cfg: Config, args) -> int:
    started = datetime.now(timezone.utc)
    st, m = cfg.study, cfg.mcmc
    methods = tuple(t.strip() for t in args.method.split(",")) if args.method \
        else st.methods
    seed = st.seed if args.seed is None else args.seed
    workers = st.workers or default_workers()
    config = StudyConfig(
        scenario=st.scenario, n=st.n, replications=st.replications,
        adjustment=st.adjustment, methods=methods, priors=_priors(cfg),
        omega_grid=m.omega_grid,
        mcmc=McmcOptions(R=st.draws, burn_in=st.burn_in, thin=m.thin,
                         backend=m.backend),
        seed=seed, tau0=st.tau0, level=m.level, workers=workers)
    result = run_study(config, progress=True)
    out = _out_dir(args)
    write_csv(out / "metrics.csv",
              ("scenario", "method", "n", "bias_x100", "rmse_x100", "cp", "avl",
               "br", "rr", "replications", "failures"),
              _metrics_rows(result))
    write_manifest(out / "manifest.json", cfg, "simulate",
                   {"seed": seed, "methods": list(methods), "workers": workers},
                   started)
    for row in result.rows:
        print(f"{row.method:<12} bias x100={_g(100 * row.bias)} "
              f"rmse x100={_g(100 * row.rmse)} cp={_g(row.cp, 3)} "
              f"avl={_g(row.avl, 3)}")
    return 0


def render_bars(labels, before, after, width: int = 40) -> str:
    """Plain-text bars of |SMD| before (#) and after (=) weighting."""
    top = max(float(np.max(np.abs(before))), float(np.max(np.abs(after))), 1e-12)
    lab_w = max(len(s) for s in labels)
    lines = [f"|SMD|, full bar = {_g(top, 3)}"]
    for lab, b, a in zip(labels, before, after):
        nb = int(round(width * abs(b) / top))
        na = int(round(width * abs(a) / top))
        lines.append(f"{lab:<{lab_w}} before |{'#' * nb:<{width}}| {_g(abs(b), 3)}")
        lines.append(f"{'':<{lab_w}} after  |{'=' * na:<{width}}| {_g(abs(a), 3)}")
    return "\n".join(lines) + "\n"


def cmd_diagnose(cfg: Config, args) -> int:
    started = datetime.now(timezone.utc)
    ds = _load_data(cfg)
    if np.isnan(ds.X).any():
        raise GbcalError("diagnose needs fully observed covariates")
    basis = _basis(cfg, ds)
    method = args.method or cfg.data.weighting
    lam = cfg.data.rcal_lambda if args.lam is None else args.lam
    if method == "unit":
        w = np.ones(ds.n)
    else:
        if method == "cbps":
            fit = fit_cbps_exact(ds, basis)
        elif method == "logit":
            fit = fit_logistic_mle(ds, basis)
        elif method == "rcal":
            fit = fit_rcal(ds, basis, lam)
        elif method == "brcal":
            m = cfg.mcmc
            omega = args.omega if args.omega is not None else (m.omega or 1.0)
            seed = m.seed if args.seed is None else args.seed
            draws = run_two_stage(ds, basis, omega, _priors(cfg),
                                  McmcOptions(R=m.draws, burn_in=m.burn_in,
                                              seed=seed), keep_scores=False)
            G = basis.transform(ds.X)
            fit = argparse.Namespace(e=expit(draws.alpha @ G.T).mean(axis=0))
        else:
            raise GbcalError(f"unknown weighting method {method!r} "
                             "(unit, logit, cbps, rcal, brcal)")
        w = ipw_weights(fit.e, ds.A)
    G = basis.transform(ds.X)
    labels = basis.labels(ds.names)[1:]
    before = smd(G[:, 1:], ds.A)
    after = smd(G[:, 1:], ds.A, w)
    out = _out_dir(args)
    write_csv(out / "smd.csv", ("covariate", "smd_before", "smd_after"),
              zip(labels, before, after))
    bars = render_bars(labels, before, after)
    if args.bars:
        (out / "smd.txt").write_text(bars, encoding="utf-8")
    sys.stdout.write(f"weighting: {method}\n" + bars)
    write_manifest(out / "manifest.json", cfg, "diagnose",
                   {"method": method, "lambda": lam}, started)
    return 0


def cmd_oracle_ate(cfg: Config, args) -> int:
    started = datetime.now(timezone.utc)
    seed = cfg.study.seed if args.seed is None else args.seed
    m = cfg.study.oracle_m if args.m is None else args.m
    est, se = true_ate_oracle(m, np.random.default_rng(seed))
    out = _out_dir(args)
    write_csv(out / "oracle.csv", ("m", "seed", "tau0", "se"), [(m, seed, est, se)])
    write_manifest(out / "manifest.json", cfg, "oracle-ate", {"seed": seed, "m": m},
                   started)
    print(f"true ATE ~ {_g(est)} (MC SE {_g(se, 2)}, m={m})")
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate,
            "diagnose": cmd_diagnose, "oracle-ate": cmd_oracle_ate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gbcal", description=__doc__)
    ap.add_argument("--version", action="version", version=f"gbcal {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file ([data], [priors], [mcmc], [study])")
        p.add_argument("--seed", type=int)
        p.add_argument("--omega", type=float, help="fixed learning rate (skips PCIC)")
        p.add_argument("--lambda", dest="lam", type=float,
                       help="RCAL penalty for diagnose --method rcal")
        p.add_argument("--method", help="estimate: brcal|bootstrap; diagnose: "
                       "unit|logit|cbps|rcal|brcal; simulate: comma-separated tags")
        p.add_argument("--out-dir", default="gbcal_out")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "diagnose":
            p.add_argument("--bars", action="store_true",
                           help="also write smd.txt with a text bar chart")
        if name == "oracle-ate":
            p.add_argument("--m", type=int, help="Monte Carlo sample size")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else Config()
        return COMMANDS[args.command](cfg, args)
    except (GbcalError, ConvergenceError, OSError, np.linalg.LinAlgError) as exc:
        print(f"gbcal {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
