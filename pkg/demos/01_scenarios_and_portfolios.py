"""
Scenarios and portfolios
========================

A standard-normal driver X of shape (n, T, d) feeds a Hull-White short
rate, equity and real-estate indices and a Lee-Carter mortality index.
Two liabilities sit on top: a short European call and a variable annuity
with a guaranteed minimum death benefit.
"""

# %%
import numpy as np

from repmart import esg
from repmart.esg import EsgConfig
from repmart.portfolios import annuity_cashflows, call_value_closed_form, make_portfolio

cfg = EsgConfig(T=5, d=5)
x = esg.sample_driver(20_000, 5, 5, seed=1)
paths = esg.simulate(x, cfg)
print("driver shape", x.data.shape)

# %%
# Discounted indices are martingales under Q: their means stay at 100.
for name, idx in (("equity", paths.eq_index), ("real estate", paths.re_index)):
    disc = idx / paths.cash
    print(f"{name:12s} E[S_t / C_t] =", np.round(disc.mean(axis=0), 2))

# Zero-coupon bonds reprice the cash account.
print("E[1 / C_5] =", round(float(np.mean(1 / paths.cash[:, -1])), 5),
      " P(0, 5) =", round(float(esg.bond_price(np.array([cfg.r0]), 0, 5, cfg)[0]), 5))

# %%
# Short call: the only cash flow is the discounted payoff at T.
call = make_portfolio("european_call")
xc = esg.sample_driver(200_000, 5, 3, seed=2).data
f = call.terminal(xc)
v0 = call_value_closed_form(np.zeros((1, 0, 3)), 0, call.esg, call.spec)[0]
print(f"call: MC V0 = {f.mean():.4f} +- {f.std() / np.sqrt(f.size):.4f}, closed form {v0:.4f}")

# %%
# Variable annuity: yearly death benefits plus the survivors' payout at T.
flows, state = annuity_cashflows(paths, make_portfolio("variable_annuity").spec, return_state=True)
print("mean discounted cash flow per year:", np.round(flows.zeta.mean(axis=0), 0))
print("policyholders alive (path 0):", np.round(state["alive"][0], 1))
