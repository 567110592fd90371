"""A small replication study in the layout of the simulation tables.

Bias and RMSE are scaled by 100.  BR and RR compare each method with
BRCAL-PCIC.  Increase ``replications`` for tighter numbers; set GBCAL_THREADS
to use several processes.

Run: python demos/04_simulation_study.py
"""
from gbcal.gbayes import McmcOptions
from gbcal.simulate import StudyConfig, default_workers, run_study

cfg = StudyConfig(scenario="a", n=500, replications=40,
                  methods=("logit", "cbps", "rcal-cv", "brcal-pcic"),
                  mcmc=McmcOptions(R=1000, burn_in=1000), workers=default_workers())
res = run_study(cfg)

print(f"scenario ({cfg.scenario}), n={cfg.n}, {cfg.replications} replications, tau0={cfg.tau0}")
print(f"{'method':<12}{'bias':>8}{'RMSE':>8}{'CP':>7}{'AvL':>7}{'BR':>7}{'RR':>7}")
for r in res.rows:
    br = f"{r.br:7.3f}" if r.br is not None else "      -"
    rr = f"{r.rr:7.3f}" if r.rr is not None else "      -"
    print(f"{r.method:<12}{100 * r.bias:8.3f}{100 * r.rmse:8.3f}{r.cp:7.3f}{r.avl:7.3f}{br}{rr}")
print("selected learning rates:", sorted(set(res.omegas.tolist())))
