"""
Fitting replicating martingales
===============================

Regress the call's discounted payoff on three feature families and look at
the fitted value at t = 1 against the exact value.
"""

# %%
import time

import numpy as np

from repmart import esg
from repmart.fit import FitConfig, TrainingSet, fit_regress_later, fit_regress_now, lasso_fit
from repmart.features import FullHermite
from repmart.portfolios import call_value_closed_form, make_portfolio

call = make_portfolio("european_call")
n = 5000
x = esg.sample_driver(n, 5, 3, seed=10).data
train = TrainingSet(x.reshape(n, -1), call.terminal(x), 3, 5)

val = esg.sample_driver(50_000, 5, 3, seed=11).data[:, :1]
exact = call_value_closed_form(val, 1, call.esg, call.spec)

# %%
configs = {
    "regress-later full Hermite": FitConfig(),
    "regress-later LDR (p=3)": FitConfig(family="poly_ldr", p=3),
    "regress-later ReLU (m=30)": FitConfig(family="relu_net", m=30, seed=1),
}
for name, cfg in configs.items():
    t0 = time.perf_counter()
    model = fit_regress_later(train, cfg)
    err = np.mean(np.abs(model.value(val, 1) - exact)) / np.mean(np.abs(exact))
    print(f"{name:28s} V0 = {model.v0:8.4f}  rel L1 at t=1 = {100 * err:5.2f}%  ({time.perf_counter() - t0:.1f}s)")

now = fit_regress_now(train, 1, FitConfig(mode="regress_now"))
err = np.mean(np.abs(now.value(val) - exact)) / np.mean(np.abs(exact))
print(f"{'regress-now full Hermite':28s} V0 = {now.v0:8.4f}  rel L1 at t=1 = {100 * err:5.2f}%")

# %%
# Starting frames matter for the Stiefel search; folding pools each
# component over time.
for start in ("folding", "diagonal", "random"):
    m = fit_regress_later(train, FitConfig(family="poly_ldr", p=3, ldr_start=start, seed=3))
    print(f"LDR start {start:8s}: final loss {m.diagnostics['loss_history'][-1]:.4f} after {m.diagnostics['iterations']} iterations")

# %%
# Lasso on the full basis keeps a sparse subset chosen by AIC.
Phi = FullHermite(3, 5, 3).features(train.X)
res = lasso_fit(Phi, train.y)
print(f"lasso keeps {res.n_active} of {Phi.shape[1]} Hermite features")
