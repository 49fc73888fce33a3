"""Acceptance suite: one test per criterion, tolerances as stated.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""
import math

import numpy as np
import pytest
from scipy.linalg import sqrtm, subspace_angles
from scipy.stats import norm

from repmart import esg
from repmart import features as feat
from repmart.esg import EsgConfig
from repmart.features import FullHermite, MultiIndexBasis, PolyLDR, ReluNet
from repmart.fit import FitConfig, TrainingSet, fit_regress_later, fit_regress_now, ols_fit
from repmart.metrics import BenchmarkDistribution, MethodSpec, run_macro_experiment
from repmart.portfolios import AnnuitySpec, annuity_cashflows, call_value_closed_form, make_portfolio
from repmart.risk import DEFAULT_INNER_GRID, expected_shortfall, value_at_risk

from test_portfolios import _scalar_annuity_oracle


def test_criterion_01_basis_size_tables():
    full = {(15, 3): 816, (120, 3): 302_621, (25, 3): 3_276, (200, 3): 1_373_701}
    ldr = {(3, 5, 3): 29, (3, 40, 3): 134, (5, 5, 10): 481, (5, 40, 10): 2_231}
    bad = [f"basis_size{k} = {feat.basis_size(*k)} != {v}" for k, v in full.items() if feat.basis_size(*k) != v]
    for (d, T, p), v in ldr.items():
        # dTp - p(p+1)/2 + binom(p + delta, p), delta = 3
        got = feat.ldr_parameter_count(d, T, p, 3)
        if got != v:
            bad.append(f"LDR total (d={d}, T={T}, p={p}) = {got} != {v}")
    assert not bad, "; ".join(bad)


def _inner_oracle(spec, prefix, t, beta, rng, N=100_000):
    d, T = spec.d, spec.T
    x = np.empty((N, d * T))
    x[:, : t * d] = prefix
    x[:, t * d:] = rng.standard_normal((N, (T - t) * d))
    y = spec.features(x) @ beta
    return y.mean(), y.std(ddof=1) / math.sqrt(N)


@pytest.mark.parametrize("family", ["full_hermite", "poly_ldr", "relu_net"])
def test_criterion_02_closed_form_vs_inner_mc(family):
    rng = np.random.default_rng({"full_hermite": 1, "poly_ldr": 2, "relu_net": 3}[family])
    hits = 0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        T = int(rng.integers(1, 12 // d + 1))
        t = int(rng.integers(0, T))
        if family == "full_hermite":
            spec = FullHermite(d, T, int(rng.integers(1, 4)))
        elif family == "poly_ldr":
            p = int(rng.integers(1, min(d * T, 4) + 1))
            spec = PolyLDR(d, T, feat.random_stiefel(d * T, p, rng), int(rng.integers(1, 4)))
        else:
            m = int(rng.integers(1, 8))
            spec = ReluNet(d, T, rng.standard_normal((d * T, m)), rng.standard_normal(m), None)
        beta = rng.standard_normal(spec.n_features)
        prefix = rng.standard_normal((1, t * d))
        g = spec.conditional_expectation(prefix, t)[0] @ beta
        mean, se = _inner_oracle(spec, prefix, t, beta, rng)
        hits += abs(g - mean) <= 4 * se + 1e-12
    assert hits >= 97, f"{hits}/100 within 4 SE"


def test_criterion_03_kan_identity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for p in range(1, 5):
        for alpha in MultiIndexBasis(p, 3).alphas[1:]:
            terms = feat.kan_monomial_decomposition(tuple(int(a) for a in alpha))
            y = rng.standard_normal((20, p))
            recon = sum(c * (y @ h) ** k for c, h, k in terms)
            worst = max(worst, np.max(np.abs(recon - np.prod(y ** alpha, axis=1))))
    assert worst < 1e-10


def test_criterion_04_bachelier():
    unit = ReluNet(1, 1, np.array([[1.0]]), np.array([0.0]), None)
    g = feat.relu_conditional_expectation(np.zeros((1, 0)), unit, 0)[0, 0]
    assert abs(g - 0.3989422804014327) < 1e-12
    rng = np.random.default_rng(4)
    for _ in range(20):
        mu, sigma = rng.uniform(-2, 2), rng.uniform(0.1, 3)
        spec = ReluNet(1, 1, np.array([[sigma]]), np.array([mu]), None)
        closed = feat.relu_conditional_expectation(np.zeros((1, 0)), spec, 0)[0, 0]
        sample = np.maximum(mu + sigma * rng.standard_normal(10_000_000), 0)
        assert abs(sample.mean() - closed) < 4 * sample.std(ddof=1) / math.sqrt(sample.size)


def _span_residual(F, G):
    coef, *_ = np.linalg.lstsq(G, F, rcond=None)
    return np.linalg.norm(F - G @ coef) / np.linalg.norm(F)


def test_criterion_05_stiefel_reparametrisation():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(3, 9))
        p = int(rng.integers(1, min(n, 3) + 1))
        delta = int(rng.integers(1, 4))
        basis = MultiIndexBasis(p, delta)
        m = basis.size
        A = rng.standard_normal((n, p))
        b = rng.standard_normal(p)
        U, _ = np.linalg.qr(rng.standard_normal((p, p)))
        At = A @ np.real(np.linalg.inv(sqrtm(A.T @ A))) @ U
        assert np.abs(At.T @ At - np.eye(p)).max() < 1e-10
        x = rng.standard_normal((5 * m, n))
        F = feat.eval_hermite_features(x @ A + b, basis)
        G = feat.eval_hermite_features(x @ At, basis)
        worst = max(worst, _span_residual(F, G), _span_residual(G, F))
    assert worst < 1e-8


def _numerical_rank(Phi):
    s = np.linalg.svd(Phi / math.sqrt(Phi.shape[0]), compute_uv=False)
    return int(np.sum(s > s[0] * 1e-9))


def test_criterion_06_relu_rank():
    rng = np.random.default_rng(6)
    checked = 0
    while checked < 20:
        dT = int(rng.integers(1, 6))
        m = int(rng.integers(1, 21))
        W = rng.standard_normal((dT + 1, m))
        W /= np.linalg.norm(W, axis=0)
        # a kink many sd out makes the node affine to double precision
        if np.any(np.abs(W[-1]) > 3 * np.linalg.norm(W[:-1], axis=0)):
            continue
        spec = ReluNet(1, dT, W[:-1], W[-1], None)
        Phi = spec.features(rng.standard_normal((50_000, dT)))
        assert _numerical_rank(Phi) == m
        checked += 1
    # three dependent (a, b) on the sphere together with their negatives
    dT = 3
    u, v = rng.standard_normal(dT + 1), rng.standard_normal(dT + 1)
    W = np.column_stack([u, v, u + 2 * v])
    W /= np.linalg.norm(W, axis=0)
    W = np.hstack([W, -W])
    spec = ReluNet(1, dT, W[:-1], W[-1], None)
    Phi = spec.features(rng.standard_normal((20_000, dT)))
    assert _numerical_rank(Phi) == 5


def test_criterion_07_martingale_mean_of_fitted_models():
    port = make_portfolio("european_call")
    x = esg.sample_driver(5000, 5, 3, 70).data
    train = TrainingSet(x.reshape(5000, -1), port.terminal(x), 3, 5)
    fresh = esg.sample_driver(1_000_000, 1, 3, 71).data
    for family, kw in (("full_hermite", {}), ("poly_ldr", {"p": 3}), ("relu_net", {"m": 30})):
        model = fit_regress_later(train, FitConfig(family=family, seed=7, **kw))
        v1 = model.value(fresh, 1)
        se = v1.std(ddof=1) / math.sqrt(v1.size)
        assert abs(v1.mean() - model.v0) < 4 * se, family


def test_criterion_08_var_es_estimators():
    z = np.random.default_rng(8).standard_normal(1_000_000)
    assert abs(value_at_risk(z, 0.99) - 2.326) <= 0.01
    assert abs(expected_shortfall(z, 0.99) - 2.665) <= 0.01
    losses = np.arange(1, 101, dtype=float)
    assert value_at_risk(losses, 0.99) == 99
    assert expected_shortfall(losses, 0.99) == 100


def test_criterion_09_method_ordering_call():
    port = make_portfolio("european_call")
    val = esg.sample_driver(100_000, 5, 3, 90).data[:, :1]
    v0 = float(call_value_closed_form(np.zeros((1, 0, 3)), 0, port.esg, port.spec)[0])
    bench = BenchmarkDistribution.from_values(v0, call_value_closed_form(val, 1, port.esg, port.spec),
                                              dataset_id="call-val")
    methods = {
        "nMC": MethodSpec("nMC", "nested_mc", inner_grid=DEFAULT_INNER_GRID),
        "now": MethodSpec("regress-now poly", "regress_now", "full_hermite"),
        "later": MethodSpec("regress-later poly", "regress_later", "full_hermite"),
        "ldr": MethodSpec("LDR", "regress_later", "poly_ldr", {"p": 3}),
        "nn": MethodSpec("NN-later", "regress_later", "relu_net", {"m": 30}),
    }
    sizes = [1000, 5000]
    mape = {}
    for key, spec in methods.items():
        rep = run_macro_experiment(spec, sizes, 20, bench, port, val, master_seed=9)
        for n in sizes:
            assert rep.value(spec.name, n, "failed_reps") == 0
            mape[key, n] = rep.value(spec.name, n, "mape_es")
    print({k: round(v, 3) for k, v in mape.items()})
    for n in sizes:
        assert mape["later", n] < mape["now", n]
        assert mape["nn", n] <= 2 * mape["later", n]
        assert mape["nMC", n] > max(mape["later", n], mape["ldr", n], mape["nn", n])


def test_criterion_10_annuity_determinism():
    cfg = EsgConfig(T=5, d=5, sigma_r=0.0, b0=0.02, r0=0.02, sigma_eq=0.0, sigma_re=0.0, lc_eps_sigma=0.0)
    spec = AnnuitySpec(T=5)
    paths = esg.simulate(esg.sample_driver(4, 5, 5, 10), cfg)
    flows, state = annuity_cashflows(paths, spec, return_state=True)
    oracle = _scalar_annuity_oracle(cfg, spec)
    assert np.max(np.abs(flows.terminal - oracle)) < 1e-9 * max(1.0, abs(oracle))
    L0 = len(spec.ages) * spec.cohort_size
    assert np.array_equal(state["alive"][:, 0], np.full(4, L0))
    assert np.allclose(state["alive"] + np.cumsum(state["dead"], axis=1), L0, rtol=1e-15, atol=0)


def _planted_ldr(seed, d=2, T=5, n=2000):
    rng = np.random.default_rng(seed)
    rate = rng.uniform(0.3, 0.8, size=d)
    A = np.zeros((d * T, d))
    for j in range(d):
        w = rate[j] ** np.arange(T)  # weights decay with time
        A[j::d, j] = w / np.linalg.norm(w)
    X = rng.standard_normal((n, d * T))
    Z = X @ A
    c = rng.uniform(0.5, 1.5, 4) * rng.choice([-1, 1], 4)
    y = c[0] * Z[:, 0] + c[1] * Z[:, 1] ** 2 + c[2] * Z[:, 0] ** 2 * Z[:, 1] + c[3] * Z[:, 1] ** 3
    return TrainingSet(X, y, d, T), A


def _recovered(train, A, **kw):
    model = fit_regress_later(train, FitConfig(family="poly_ldr", p=2, delta=3, **kw))
    return subspace_angles(model.spec.A, A).max() < 1e-3


def test_criterion_11_planted_subspace_recovery():
    train, A = _planted_ldr(0)
    random_hits = sum(_recovered(train, A, ldr_start="random", seed=s) for s in range(20))
    assert random_hits >= 10, f"random starts: {random_hits}/20"
    for start in ("folding", "diagonal"):
        hits = sum(_recovered(*_planted_ldr(s), ldr_start=start) for s in range(20))
        assert hits >= 18, f"{start} start: {hits}/20"


def test_criterion_12_interpolation_edge():
    rng = np.random.default_rng(12)
    for m in (5, 50, 200):
        Phi = rng.standard_normal((m, m))
        y = rng.standard_normal(m)
        assert ols_fit(Phi, y).residual / np.linalg.norm(y) < 1e-8
    spec = FullHermite(3, 1, 3)
    x = rng.standard_normal((spec.n_features, 3))
    y = np.exp(x.sum(axis=1))
    model = fit_regress_later(TrainingSet(x, y, 3, 1), FitConfig())
    assert np.linalg.norm(model.terminal(x) - y) / np.linalg.norm(y) < 1e-8


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
