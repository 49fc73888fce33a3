"""Discounted cash flows of the two example portfolios.

``CallPortfolio`` is a short European call on the equity index,
``AnnuityPortfolio`` a unit-linked account with a return-of-premium death
benefit. Both expose ``cashflows(x)`` and ``terminal(x)`` on driver arrays of
shape ``(n, T, d)``, which is all the fitting and nested Monte Carlo code
needs from a portfolio.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import esg as esg_mod
from .esg import CASH, EQUITY, RATE, EconomicPaths, EsgConfig


@dataclass
class CashflowSample:
    zeta: np.ndarray  # (n, T) discounted cash flows for t = 1..T

    @property
    def terminal(self) -> np.ndarray:
        return self.zeta.sum(axis=1)

    @property
    def n_paths(self) -> int:
        return self.zeta.shape[0]


@dataclass(frozen=True)
class CallSpec:
    strike: float = 100.0
    T: int = 5

    def __post_init__(self):
        if self.strike <= 0:
            raise ValueError("strike must be positive")


@dataclass(frozen=True)
class AnnuitySpec:
    T: int = 5
    premium: float = 100.0
    mix: tuple = (1 / 3, 1 / 3, 1 / 5, 2 / 15)
    bond_tenors: tuple = (10, 20)
    cohort_size: float = 1000.0
    # open interval (30, 70) read as integer ages 31..69
    ages: tuple = field(default=tuple(range(31, 70)))
    mortality: bool = True

    def __post_init__(self):
        if len(self.mix) != 4 or min(self.mix) <= 0 or abs(sum(self.mix) - 1) > 1e-12:
            raise ValueError(f"asset mix must be 4 positive weights summing to 1, got {self.mix}")


def call_terminal_value(paths: EconomicPaths, spec: CallSpec) -> CashflowSample:
    if paths.T < spec.T:
        raise ValueError(f"paths end at {paths.T}, call matures at {spec.T}")
    if paths.eq_index is None:
        raise ValueError("paths carry no equity index")
    zeta = np.zeros((paths.n_paths, spec.T))
    eq = paths.eq_index[:, spec.T]
    zeta[:, -1] = -np.maximum(eq - spec.strike, 0.0) / paths.cash[:, spec.T]
    return CashflowSample(zeta)


def annuity_cashflows(paths: EconomicPaths, spec: AnnuitySpec, return_state: bool = False):
    """Run the fund, guarantee and cohort recursions.

    With ``return_state`` also returns a dict of the per-period state arrays
    (A, G, L, D) used by the audits.
    """
    T = spec.T
    if paths.T < T:
        raise ValueError(f"paths end at {paths.T}, policies mature at {T}")
    if paths.eq_index is None or paths.re_index is None:
        raise ValueError("annuity needs equity and real-estate indices (d = 5)")
    n = paths.n_paths
    cash = paths.cash
    ten1, ten2 = spec.bond_tenors

    units = np.zeros((n, 4))
    unit_hist = np.zeros((n, T + 1, 4))
    assets = np.zeros((n, T + 1))
    guarantee = np.zeros(T + 1)
    for t in range(T + 1):
        premium = spec.premium if t < T else 0.0
        price = np.column_stack([
            paths.bond(t, t + ten1), paths.bond(t, t + ten2),
            paths.eq_index[:, t], paths.re_index[:, t],
        ])
        # rolled constant-maturity bonds are one year shorter on arrival
        price_in = np.column_stack([
            paths.bond(t, t + ten1 - 1), paths.bond(t, t + ten2 - 1),
            paths.eq_index[:, t], paths.re_index[:, t],
        ])
        carried = units * price_in
        assets[:, t] = carried.sum(axis=1) + premium
        units = (carried + np.asarray(spec.mix) * premium) / price
        unit_hist[:, t] = units
        if t >= 1:
            guarantee[t] = guarantee[t - 1] + spec.premium

    ages0 = np.asarray(spec.ages)
    alive = np.full((n, ages0.size), float(spec.cohort_size))
    alive_tot = np.zeros((n, T + 1))
    dead_tot = np.zeros((n, T + 1))
    alive_tot[:, 0] = alive.sum(axis=1)
    zeta = np.zeros((n, T))
    for t in range(1, T + 1):
        benefit = np.maximum(assets[:, t], guarantee[t]) / cash[:, t]
        if t == T:
            zeta[:, t - 1] = alive_tot[:, t - 1] * benefit
        if spec.mortality:
            dead = alive * paths.death_rate(ages0 + (t - 1), t)  # cohort ages at t-1
        else:
            dead = np.zeros_like(alive)
        alive = alive - dead
        dead_tot[:, t] = dead.sum(axis=1)
        alive_tot[:, t] = alive.sum(axis=1)
        if t < T:
            zeta[:, t - 1] = dead_tot[:, t] * benefit
    sample = CashflowSample(zeta)
    if return_state:
        return sample, dict(assets=assets, guarantee=guarantee, alive=alive_tot, dead=dead_tot, units=unit_hist)
    return sample


class CallPortfolio:
    name = "european_call"

    def __init__(self, esg_cfg: EsgConfig | None = None, spec: CallSpec | None = None):
        self.spec = spec or CallSpec()
        self.esg = esg_cfg or EsgConfig(T=self.spec.T, d=3)
        if self.esg.d < 3:
            raise ValueError("call needs d >= 3")
        self.T, self.d = self.spec.T, self.esg.d

    def paths(self, x) -> EconomicPaths:
        return esg_mod.simulate(x, self.esg)

    def cashflows(self, x) -> CashflowSample:
        return call_terminal_value(self.paths(x), self.spec)

    def terminal(self, x) -> np.ndarray:
        return self.cashflows(x).terminal

    def value(self, prefix, t: int) -> np.ndarray:
        """Closed-form V_t given the driver prefix of shape (n, t, d)."""
        return call_value_closed_form(prefix, t, self.esg, self.spec)


class AnnuityPortfolio:
    name = "variable_annuity"

    def __init__(self, esg_cfg: EsgConfig | None = None, spec: AnnuitySpec | None = None):
        self.spec = spec or AnnuitySpec()
        self.esg = esg_cfg or EsgConfig(T=self.spec.T, d=5)
        if self.esg.d < 5 and self.spec.mortality:
            raise ValueError("annuity with mortality needs d = 5")
        self.T, self.d = self.spec.T, self.esg.d

    def paths(self, x) -> EconomicPaths:
        return esg_mod.simulate(x, self.esg)

    def cashflows(self, x) -> CashflowSample:
        return annuity_cashflows(self.paths(x), self.spec)

    def terminal(self, x) -> np.ndarray:
        return self.cashflows(x).terminal


def make_portfolio(name: str, esg_cfg: EsgConfig | None = None, T: int | None = None, **spec_kw):
    if name == "european_call":
        spec = CallSpec(T=T or 5, **spec_kw)
        return CallPortfolio(esg_cfg or EsgConfig(T=spec.T, d=3), spec)
    if name == "variable_annuity":
        spec = AnnuitySpec(T=T or 5, **spec_kw)
        return AnnuityPortfolio(esg_cfg or EsgConfig(T=spec.T, d=5), spec)
    raise ValueError(f"unknown portfolio {name!r}")


def call_value_closed_form(prefix, t: int, cfg: EsgConfig, spec: CallSpec) -> np.ndarray:
    """Exact V_t = -E_t[max(EQ_T - K, 0) / C_T] for the short call.

    Given F_t, both log S_T and Y_T are Gaussian, affine in the future driver,
    so the expectation is an exchange-option (Margrabe) formula between
    S_T and K exp(-Y_T).
    """
    T = spec.T
    if cfg.d != 3:
        raise ValueError("closed-form call value assumes the d = 3 driver")
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 2:
        prefix = prefix.reshape(prefix.shape[0], t, -1)
    n = prefix.shape[0]
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    hw = cfg.hw_moments
    if t > 0:
        full = np.zeros((n, t, cfg.d))
        full[:] = prefix[:, :t, :]
        x_corr = esg_mod.correlate_driver(full, cfg)
        r, y = esg_mod.simulate_rates(full, cfg, x_corr)
        log_s = np.sum(-0.5 * cfg.sigma_eq**2 + cfg.sigma_eq * x_corr[:, :, EQUITY], axis=1)
        r_t, y_t = r[:, -1], y[:, -1]
    else:
        r_t, y_t, log_s = np.full(n, cfg.r0), np.zeros(n), np.zeros(n)
    log_s = log_s + np.log(cfg.eq0)
    if t == T:
        return -np.maximum(np.exp(log_s) - spec.strike * np.exp(-y_t), 0.0)

    steps = T - t
    # loadings on future innovations (rate, cash, equity) per step
    width = 3 * steps
    w_r = np.zeros(width)
    w_y = np.zeros(width)
    w_s = np.zeros(width)
    c_r, c_y = r_t.copy(), y_t.copy()
    rho_ry, rho_eq = hw["rho_ry"], cfg.rho_eq_rate
    for s in range(steps):
        c_y = c_y + hw["a1"] * c_r + hw["drift_y"]
        w_y = w_y + hw["a1"] * w_r
        w_y[3 * s + RATE] += hw["std_y"] * rho_ry
        w_y[3 * s + CASH] += hw["std_y"] * np.sqrt(1 - rho_ry**2)
        c_r = hw["decay"] * c_r + hw["drift_r"]
        w_r = hw["decay"] * w_r
        w_r[3 * s + RATE] += hw["std_r"]
        w_s[3 * s + RATE] += cfg.sigma_eq * rho_eq
        w_s[3 * s + 2] += cfg.sigma_eq * np.sqrt(1 - rho_eq**2)
    mu_u = log_s - 0.5 * cfg.sigma_eq**2 * steps
    mu_w = np.log(spec.strike) - c_y
    w_w = -w_y
    var = float(np.dot(w_s - w_w, w_s - w_w))
    e_u = np.exp(mu_u + 0.5 * np.dot(w_s, w_s))
    e_w = np.exp(mu_w + 0.5 * np.dot(w_w, w_w))
    if var <= 0:
        return -np.maximum(e_u - e_w, 0.0)
    sd = np.sqrt(var)
    d1 = (np.log(e_u / e_w) + 0.5 * var) / sd
    return -(e_u * norm.cdf(d1) - e_w * norm.cdf(d1 - sd))
