"""
Expected shortfall: nested Monte Carlo against replicating martingales
======================================================================

At equal simulation budget, compare the one-year 99% expected shortfall
of the short call from plain nested Monte Carlo and from a fitted
replicating martingale. The closed-form call value is the benchmark.
"""

# %%
import numpy as np

from repmart import esg
from repmart.fit import FitConfig, TrainingSet, fit_regress_later
from repmart.portfolios import call_value_closed_form, make_portfolio
from repmart.risk import NestedMcConfig, delta_v, expected_shortfall, nested_mc, value_at_risk

call = make_portfolio("european_call")
val = esg.sample_driver(100_000, 5, 3, seed=20).data[:, :1]
v0 = call_value_closed_form(np.zeros((1, 0, 3)), 0, call.esg, call.spec)[0]
losses = delta_v(call_value_closed_form(val, 1, call.esg, call.spec), v0)
es_true = expected_shortfall(losses)
print(f"benchmark: VaR99 = {value_at_risk(losses):.3f}  ES99 = {es_true:.3f}")

# %%
budget = 5000
for n_inner in (1, 10, 50, 250):
    cfg = NestedMcConfig.from_budget(budget, n_inner, t=1, seed=n_inner)
    dist = nested_mc(call, cfg)
    es = expected_shortfall(dist.losses())
    print(f"nested MC {cfg.n_outer:5d} x {n_inner:3d}: ES99 = {es:7.3f}  ({100 * (es / es_true - 1):+6.1f}%)")

# %%
x = esg.sample_driver(budget, 5, 3, seed=21).data
model = fit_regress_later(TrainingSet(x.reshape(budget, -1), call.terminal(x), 3, 5), FitConfig())
es_rm = expected_shortfall(delta_v(model.value(val, 1), model.v0))
print(f"replicating martingale:  ES99 = {es_rm:7.3f}  ({100 * (es_rm / es_true - 1):+6.1f}%)")
