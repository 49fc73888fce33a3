import math

import numpy as np
import pytest
from scipy.stats import norm

from repmart import esg
from repmart.esg import EconomicPaths, EsgConfig
from repmart.portfolios import (AnnuitySpec, CallPortfolio, CallSpec, annuity_cashflows, call_terminal_value,
                                call_value_closed_form, make_portfolio)


def _paths_with(eq_T, cash_T, T=5):
    cfg = EsgConfig(T=T, d=3)
    n = np.size(eq_T)
    log_cash = np.zeros((n, T + 1))
    log_cash[:, -1] = np.log(cash_T)
    eq = np.ones((n, T + 1)) * 100
    eq[:, -1] = eq_T
    return EconomicPaths(cfg, np.zeros((n, T + 1)), log_cash, eq, None, None)


def test_call_out_of_the_money():
    z = call_terminal_value(_paths_with([80.0], 1.1), CallSpec())
    assert z.zeta[0, -1] == 0.0


def test_call_arithmetic():
    z = call_terminal_value(_paths_with([150.0], 1.25), CallSpec())
    assert z.zeta[0, -1] == pytest.approx(-40.0, rel=1e-15)
    assert np.all(z.zeta[:, :-1] == 0)
    assert np.array_equal(z.terminal, z.zeta.sum(axis=1))


def test_call_horizon_mismatch():
    with pytest.raises(ValueError):
        call_terminal_value(_paths_with([100.0], 1.0, T=3), CallSpec(T=5))


def test_call_zero_rate_price_against_black_scholes():
    cfg = EsgConfig(T=5, d=3, sigma_r=0.0, b0=0.0, r0=0.0)
    port = CallPortfolio(cfg, CallSpec())
    n = 1_000_000
    payoff = -port.terminal(esg.sample_driver(n, 5, 3, 21).data)
    sd = 0.2 * np.sqrt(5)
    d1 = 0.5 * sd
    oracle = 100 * (norm.cdf(d1) - norm.cdf(-d1))
    assert oracle > 0
    assert abs(payoff.mean() - oracle) < 4 * payoff.std() / np.sqrt(n)


def test_call_closed_form_against_monte_carlo():
    port = make_portfolio("european_call")
    n = 1_000_000
    y = port.terminal(esg.sample_driver(n, 5, 3, 5).data)
    v0 = port.value(np.zeros((1, 0, 3)), 0)[0]
    assert abs(y.mean() - v0) < 4 * y.std() / np.sqrt(n)


def test_call_closed_form_conditional_against_inner_mc(rng):
    port = make_portfolio("european_call")
    for t in (1, 3):
        prefix = rng.standard_normal((1, t, 3))
        n = 200_000
        x = np.empty((n, 5, 3))
        x[:, :t] = prefix
        x[:, t:] = rng.standard_normal((n, 5 - t, 3))
        y = port.terminal(x)
        v = call_value_closed_form(prefix, t, port.esg, port.spec)[0]
        assert abs(y.mean() - v) < 4 * y.std() / np.sqrt(n)
    x = rng.standard_normal((10, 5, 3))
    assert np.allclose(call_value_closed_form(x, 5, port.esg, port.spec), port.terminal(x), rtol=1e-12)


def test_call_ignores_mortality_driver(rng):
    cfg = EsgConfig(T=5, d=5)
    port = CallPortfolio(cfg, CallSpec())
    x = rng.standard_normal((200, 5, 5))
    y = x.copy()
    y[..., 4] = y[rng.permutation(200), :, 4]
    assert np.array_equal(port.terminal(x), port.terminal(y))


def _scalar_annuity_oracle(cfg: EsgConfig, spec: AnnuitySpec) -> float:
    """Independent scalar recursion for a deterministic scenario (all vols zero)."""
    r = cfg.r0
    assert cfg.b0 == r and cfg.sigma_r == 0

    def bond(tau):
        return math.exp(-r * tau)

    T = spec.T
    units = [0.0] * 4
    assets = []
    for t in range(T + 1):
        cash = math.exp(r * t)
        prem = spec.premium if t < T else 0.0
        p_in = [bond(spec.bond_tenors[0] - 1), bond(spec.bond_tenors[1] - 1), cfg.eq0 * cash, cfg.re0 * cash]
        p_out = [bond(spec.bond_tenors[0]), bond(spec.bond_tenors[1]), cfg.eq0 * cash, cfg.re0 * cash]
        assets.append(sum(u * p for u, p in zip(units, p_in)) + prem)
        units = [(u * pi + m * prem) / po for u, pi, m, po in zip(units, p_in, spec.mix, p_out)]
    table = {}
    for lo, hi, a, b in cfg.lc_table:
        for age in range(lo, hi + 1):
            table[age] = (a, b)
    alive = {x: spec.cohort_size for x in spec.ages}
    total = 0.0
    for t in range(1, T + 1):
        k = cfg.lc_k0 + cfg.lc_drift * t
        benefit = max(assets[t], spec.premium * t) / math.exp(r * t)
        alive_before = sum(alive.values())
        dead = 0.0
        for x0 in spec.ages:
            a, b = table[x0 + t - 1]
            q = 1 - math.exp(-math.exp(a + b * k))
            d = alive[x0] * q
            alive[x0] -= d
            dead += d
        total += (alive_before if t == T else dead) * benefit
    return total


@pytest.mark.parametrize("T", [1, 5, 12])
def test_annuity_deterministic_oracle(T):
    cfg = EsgConfig(T=T, d=5, sigma_r=0.0, b0=0.02, r0=0.02, sigma_eq=0.0, sigma_re=0.0, lc_eps_sigma=0.0)
    spec = AnnuitySpec(T=T)
    paths = esg.simulate(esg.sample_driver(3, T, 5, 0), cfg)
    got = annuity_cashflows(paths, spec).terminal
    oracle = _scalar_annuity_oracle(cfg, spec)
    assert np.allclose(got, oracle, rtol=0, atol=1e-9 * max(1.0, abs(oracle)))


def test_annuity_guarantee_units_and_conservation():
    cfg = EsgConfig(T=5, d=5)
    paths = esg.simulate(esg.sample_driver(500, 5, 5, 7), cfg)
    flows, st = annuity_cashflows(paths, AnnuitySpec(T=5), return_state=True)
    assert st["guarantee"].tolist() == [0, 100, 200, 300, 400, 500]
    assert np.allclose(st["units"][:, 0, 2], 20.0 / paths.eq_index[:, 0], rtol=1e-15)
    L0 = 39 * 1000.0
    cum_dead = np.cumsum(st["dead"], axis=1)
    assert np.allclose(st["alive"] + cum_dead, L0, rtol=1e-13, atol=0)
    assert np.array_equal(flows.terminal, flows.zeta.sum(axis=1))
    assert np.all(st["assets"] > 0)
    cash = paths.cash
    for t in range(1, 5):
        d = st["dead"][:, t]
        assert np.all(flows.zeta[:, t - 1] >= d * st["guarantee"][t] / cash[:, t] * (1 - 1e-14))
        assert np.all(flows.zeta[:, t - 1] >= d * st["assets"][:, t] / cash[:, t] * (1 - 1e-14))


def test_annuity_zero_mortality():
    cfg = EsgConfig(T=5, d=5)
    paths = esg.simulate(esg.sample_driver(100, 5, 5, 1), cfg)
    flows, st = annuity_cashflows(paths, AnnuitySpec(T=5, mortality=False), return_state=True)
    assert np.all(flows.zeta[:, :-1] == 0)
    expected = 39_000 * np.maximum(st["assets"][:, 5], 500) / paths.cash[:, 5]
    assert np.allclose(flows.zeta[:, -1], expected, rtol=1e-14)


def test_annuity_spec_validation():
    with pytest.raises(ValueError):
        AnnuitySpec(mix=(0.5, 0.5, 0.0, 0.0))
    with pytest.raises(ValueError):
        AnnuitySpec(mix=(0.3, 0.3, 0.3, 0.3))
    with pytest.raises(ValueError):
        CallSpec(strike=0)


def test_make_portfolio_unknown():
    with pytest.raises(ValueError):
        make_portfolio("swaption")
