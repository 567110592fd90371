"""Choosing the learning rate by PCIC.

The default criterion evaluates PCIC on the loss scale (posterior mean loss
plus posterior variance of the loss, smaller is better).  The score-scale
value is shown alongside for comparison.

Run: python demos/03_pcic_selection.py
"""
import numpy as np

from gbcal.gbayes import McmcOptions, Priors, run_two_stage
from gbcal.pcic import pcic, pcic_loss, select_omega
from gbcal.simulate import adjustment_basis, gen_dataset

ds = gen_dataset(500, "a", np.random.default_rng(3))
basis = adjustment_basis(ds.X, "confounders")
opts = McmcOptions(R=1000, burn_in=1000, seed=11)

omega, table, draws = select_omega(ds, basis, Priors(), opts=opts)
print(" omega   pcic(loss)  selected")
for w, v, sel in table.rows():
    print(f"{w:6.2f}  {v:10.4f}  {'*' if sel else ''}")
print(f"selected omega={omega}, tau mean={draws.tau.mean():.4f}")

print("\nscore-scale PCIC (always prefers the flattest posterior):")
for w in table.omega:
    s = run_two_stage(ds, basis, float(w), Priors(), opts).scores
    print(f"{w:6.2f}  score-scale {pcic(s):9.4f}  loss-scale {pcic_loss(s):8.4f}")
