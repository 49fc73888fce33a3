"""Value distributions, nested Monte Carlo and empirical risk measures.

Losses are ``-(V_t - V_{t-1})``. VaR is the lower empirical quantile and
expected shortfall the mean of the worst ``ceil((1 - alpha) n)`` losses.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import esg as esg_mod

DEFAULT_INNER_GRID = (1, 10, 25, 50, 100, 250, 400, 500)


@dataclass
class ValueDistribution:
    t: int
    values: np.ndarray
    v0: float
    method: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if not np.isfinite(self.values).all():
            raise ValueError(f"non-finite values in {self.method or 'value'} distribution at t={self.t}")

    @property
    def n(self) -> int:
        return self.values.size

    def losses(self) -> np.ndarray:
        return delta_v(self, self.v0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "value"])
            for i, v in enumerate(self.values):
                w.writerow([i, repr(float(v))])


@dataclass
class NestedMcConfig:
    n_outer: int
    n_inner: int
    t: int = 1
    seed: int = 0
    budget: int | None = None

    def __post_init__(self):
        if self.n_outer < 1 or self.n_inner < 1:
            raise ValueError("n_outer and n_inner must be positive")
        if self.budget is not None and self.n_outer * self.n_inner != self.budget:
            raise ValueError(f"{self.n_outer} x {self.n_inner} does not match budget {self.budget}")

    @classmethod
    def from_budget(cls, budget: int, n_inner: int, t: int = 1, seed: int = 0) -> "NestedMcConfig":
        if n_inner > budget:
            raise ValueError(f"n_inner={n_inner} exceeds budget {budget}")
        n_outer = budget // n_inner
        return cls(n_outer, n_inner, t, seed)


def eval_value_process(model, prefix, t: int, method: str = "replicating_martingale") -> ValueDistribution:
    """Closed-form V_t on outer prefixes for a fitted model."""
    T = model.spec.T
    if not 0 <= t <= T:
        raise ValueError(f"horizon t={t} outside [0, {T}]")
    prefix = np.asarray(prefix, dtype=float)
    n = prefix.shape[0]
    if t == 0:
        return ValueDistribution(0, np.full(n, model.v0), model.v0, method)
    return ValueDistribution(t, model.value(prefix.reshape(n, -1), t), model.v0, method)


def _tail_count(alpha: float, n: int) -> int:
    # guard against (1 - 0.99) * 100 = 1.0000000000000009
    x = (1.0 - alpha) * n
    k = math.ceil(x - 1e-9 * max(1.0, x))
    return k


def _check(values, alpha):
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empty loss sample")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return values


def value_at_risk(values, alpha: float = 0.99) -> float:
    """Smallest order statistic y with empirical CDF F(y) >= alpha."""
    values = _check(values, alpha)
    n = values.size
    x = alpha * n
    k = max(math.ceil(x - 1e-9 * max(1.0, x)), 1)
    return float(np.partition(values, k - 1)[k - 1])


def expected_shortfall(values, alpha: float = 0.99) -> float:
    """Mean of the worst ceil((1 - alpha) n) losses."""
    values = _check(values, alpha)
    k = _tail_count(alpha, values.size)
    if k < 1:
        raise ValueError(f"no tail points for alpha={alpha} and n={values.size}")
    k = min(k, values.size)
    tail = np.partition(values, values.size - k)[values.size - k:]
    return float(np.sort(tail).mean())


def delta_v(dist_t, v_prev) -> np.ndarray:
    """Loss sample -(V_t - V_{t-1}) per path."""
    vt = dist_t.values if isinstance(dist_t, ValueDistribution) else np.asarray(dist_t, dtype=float)
    if isinstance(v_prev, ValueDistribution):
        prev = v_prev.values
        if prev.shape != vt.shape:
            raise ValueError(f"misaligned value distributions: {prev.shape} vs {vt.shape}")
    else:
        prev = np.asarray(v_prev, dtype=float)
        if prev.ndim and prev.shape != vt.shape:
            raise ValueError(f"misaligned value distributions: {prev.shape} vs {vt.shape}")
    return -(vt - prev)


def nested_mc(portfolio, cfg: NestedMcConfig, outer_prefix=None, method: str = "nested_mc",
              chunk_paths: int = 200_000) -> ValueDistribution:
    """Plain nested Monte Carlo estimate of V_t on ``n_outer`` outer prefixes.

    Each outer path gets its own inner substream keyed by (seed, path index),
    so results do not depend on chunking.
    """
    T, d, t = portfolio.T, portfolio.d, cfg.t
    if not 0 <= t <= T:
        raise ValueError(f"horizon t={t} outside [0, {T}]")
    if t == 0:
        outer_prefix = np.zeros((cfg.n_outer, 0, d))
    elif outer_prefix is None:
        words = esg_mod.seed_words(cfg.seed)
        outer_prefix = esg_mod.sample_driver(cfg.n_outer, T, d, words + [0x6F75746572]).data[:, :t]
    outer_prefix = np.asarray(outer_prefix, dtype=float)
    outer_prefix = outer_prefix.reshape(outer_prefix.shape[0], t, d)[: cfg.n_outer]
    n_outer = outer_prefix.shape[0]
    if n_outer < cfg.n_outer:
        raise ValueError(f"only {n_outer} outer prefixes supplied, need {cfg.n_outer}")
    ni = cfg.n_inner
    words = esg_mod.seed_words(cfg.seed)
    values = np.empty(n_outer)
    step = max(1, chunk_paths // ni)
    for lo in range(0, n_outer, step):
        hi = min(lo + step, n_outer)
        x = np.empty((hi - lo, ni, T, d))
        x[:, :, :t] = outer_prefix[lo:hi, None]
        for i in range(lo, hi):
            rng = np.random.default_rng(words + [0x696E6E6572, i])
            x[i - lo, :, t:] = rng.standard_normal((ni, T - t, d))
        f = portfolio.terminal(x.reshape(-1, T, d)).reshape(hi - lo, ni)
        values[lo:hi] = f.mean(axis=1)
    if t == 0:
        # a single information state: pool every inner draw
        values[:] = values.mean()
    return ValueDistribution(t, values, float(values.mean()), method)


@dataclass
class SplitResult:
    n_outer: int
    n_inner: int
    mape: dict = field(default_factory=dict)  # n_inner -> MApE ES (%)


def split_search(total_budget: int, candidates, benchmark_es: float, repetitions: int, estimator) -> SplitResult:
    """Pick the (n_outer, n_inner) split with the smallest MApE of ES.

    ``estimator(n_outer, n_inner, rep)`` returns one ES estimate. Ties go to
    the larger n_outer.
    """
    candidates = sorted({int(c) for c in candidates})
    if not candidates:
        raise ValueError("empty candidate list")
    if benchmark_es == 0:
        raise ValueError("benchmark ES must be nonzero")
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    feasible = [c for c in candidates if 1 <= c <= total_budget]
    if not feasible:
        raise ValueError(f"no candidate n_inner fits the budget {total_budget}")
    if len(feasible) == 1:
        c = feasible[0]
        return SplitResult(total_budget // c, c, {})
    mape = {}
    for c in feasible:
        n_outer = total_budget // c
        errs = [abs(estimator(n_outer, c, r) - benchmark_es) for r in range(repetitions)]
        mape[c] = 100.0 * float(np.mean(errs)) / abs(benchmark_es)
    # smallest n_inner first so a tie keeps the larger n_outer
    best = min(feasible, key=lambda c: (mape[c], c))
    return SplitResult(total_budget // best, best, mape)
