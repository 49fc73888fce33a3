"""Economic scenario generator.

Maps an i.i.d. standard-normal driver of shape ``(n_paths, T, d)`` to a
Hull-White short rate, the log cash account, equity and real-estate indices
and Lee-Carter death rates on an annual grid ``0..T``.

Driver components (0-based):

    0  short rate
    1  log cash account (correlated with 0 through the exact HW transition)
    2  equity excess return
    3  real-estate excess return
    4  Lee-Carter period index
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np

# Rows are (age_lo, age_hi, a_x, b_x), inclusive ranges.
LEE_CARTER_TABLE: tuple[tuple[int, int, float, float], ...] = (
    (0, 0, -3.641090, 0.90640),
    (1, 4, -6.705810, 0.11049),
    (5, 9, -7.510640, 0.09179),
    (10, 14, -7.557170, 0.08358),
    (15, 19, -6.760120, 0.04744),
    (20, 24, -6.443340, 0.05351),
    (25, 29, -6.400620, 0.05966),
    (30, 34, -6.229090, 0.06173),
    (35, 39, -5.913250, 0.05899),
    (40, 44, -5.513230, 0.05279),
    (45, 49, -5.090240, 0.04458),
    (50, 54, -4.656800, 0.03830),
    (55, 59, -4.254970, 0.03382),
    (60, 64, -3.856080, 0.02949),
    (65, 69, -3.473130, 0.02880),
    (70, 74, -3.061170, 0.02908),
    (75, 79, -2.630230, 0.03240),
    (80, 84, -2.204980, 0.03091),
    (85, 89, -1.799600, 0.03091),
    (90, 94, -1.409363, 0.03091),
    (95, 99, -1.036550, 0.03091),
    (100, 104, -0.680350, 0.03091),
    (105, 108, -0.341050, 0.03091),
)

RATE, CASH, EQUITY, REAL_ESTATE, MORTALITY = range(5)

# Paths per RNG block; path i always comes from block i // _BLOCK so a
# prefix of a larger sample equals the smaller sample.
_BLOCK = 4096


def load_lc_table(path) -> tuple:
    """Read a Lee-Carter override with columns age_lo, age_hi, a_x, b_x."""
    import csv

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"age_lo", "age_hi", "a_x", "b_x"}
        if not need <= set(reader.fieldnames or ()):
            raise ConfigError(f"{path}: Lee-Carter table needs columns {sorted(need)}")
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.append((int(r["age_lo"]), int(r["age_hi"]), float(r["a_x"]), float(r["b_x"])))
            except ValueError:
                raise ConfigError(f"{path}: cannot parse row {lineno}: {r}") from None
    if not rows:
        raise ConfigError(f"{path}: empty Lee-Carter table")
    return tuple(rows)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EsgConfig:
    """Scenario generator parameters.

    The Hull-White, index and correlation values below are our defaults,
    not calibrated figures. The Lee-Carter scalars and table are fixed
    model inputs.
    """

    T: int = 5
    d: int = 3
    kappa: float = 0.1
    sigma_r: float = 0.01
    b0: float = 0.02
    r0: float = 0.02
    sigma_eq: float = 0.2
    sigma_re: float = 0.1
    rho_eq_rate: float = 0.3
    rho_re_rate: float = 0.3
    eq0: float = 100.0
    re0: float = 100.0
    lc_k0: float = -11.41
    lc_drift: float = -0.365
    lc_eps_sigma: float = 0.621
    lc_table: tuple = field(default=LEE_CARTER_TABLE)

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.eq0 <= 0 or self.re0 <= 0:
            raise ConfigError("initial index levels must be positive")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        # zero volatilities are allowed: deterministic audits rely on them
        for name in ("sigma_r", "sigma_eq", "sigma_re", "lc_eps_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("rho_eq_rate", "rho_re_rate"):
            if abs(getattr(self, name)) > 1:
                raise ConfigError(f"|{name}| must be <= 1")
        object.__setattr__(self, "lc_table", tuple(tuple(r) for r in self.lc_table))

    def replace(self, **kw) -> "EsgConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lc_table"] = [list(r) for r in self.lc_table]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EsgConfig":
        data = dict(data)
        if "lc_table" in data:
            data["lc_table"] = tuple(tuple(r) for r in data["lc_table"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ESG config keys: {sorted(unknown)}")
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def lc_params(self, ages) -> tuple[np.ndarray, np.ndarray]:
        """Return (a_x, b_x) arrays for integer ``ages``."""
        ages = np.atleast_1d(np.asarray(ages))
        a = np.full(ages.shape, np.nan)
        b = np.full(ages.shape, np.nan)
        for lo, hi, ax, bx in self.lc_table:
            mask = (ages >= lo) & (ages <= hi)
            a[mask] = ax
            b[mask] = bx
        if np.isnan(a).any():
            missing = sorted(set(ages[np.isnan(a)].tolist()))
            raise ConfigError(f"ages {missing} not covered by the Lee-Carter table")
        return a, b

    # exact one-step Hull-White moments (unit time step, constant b0)

    @cached_property
    def _hw(self) -> dict:
        k, s = self.kappa, self.sigma_r
        e1, e2 = np.exp(-k), np.exp(-2 * k)
        var_r = s**2 * (1 - e2) / (2 * k)
        var_y = s**2 / k**2 * (1 + (1 - e2) / (2 * k) + 2 / k * (e1 - 1))
        cov_ry = s**2 / (2 * k**2) * (1 + e2 - 2 * e1)
        std_r, std_y = np.sqrt(var_r), np.sqrt(var_y)
        rho = cov_ry / (std_r * std_y) if std_r > 0 and std_y > 0 else 0.0
        a1 = (1 - e1) / k
        return dict(
            decay=e1,
            drift_r=self.b0 * (1 - e1),  # kappa * g(t)
            a1=a1,
            drift_y=self.b0 * (1 - a1),  # kappa * h(t, t+1)
            std_r=std_r,
            std_y=std_y,
            rho_ry=float(np.clip(rho, -1.0, 1.0)),
        )

    @property
    def hw_moments(self) -> dict:
        return dict(self._hw)


@dataclass
class DriverPaths:
    data: np.ndarray  # (n_paths, T, d)
    seed: object = None

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        """(n, d*T) view ordered time-major, component-minor."""
        return self.data.reshape(self.n_paths, -1)

    def prefix(self, t: int) -> np.ndarray:
        return self.data[:, :t, :].reshape(self.n_paths, -1)


def _seed_words(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return [int(seed)]


seed_words = _seed_words


def sample_normal_blocks(n_paths: int, width: int, seed) -> np.ndarray:
    """Draw ``(n_paths, width)`` i.i.d. N(0,1) in fixed-size seeded blocks."""
    if n_paths < 1 or width < 1:
        raise ValueError(f"empty draw requested: n_paths={n_paths}, width={width}")
    words = _seed_words(seed)
    n_blocks = -(-n_paths // _BLOCK)
    out = np.empty((n_blocks * _BLOCK, width))
    for blk in range(n_blocks):
        rng = np.random.default_rng(np.random.SeedSequence(words + [blk]))
        out[blk * _BLOCK:(blk + 1) * _BLOCK] = rng.standard_normal((_BLOCK, width))
    return out[:n_paths]


def sample_driver(n_paths: int, T: int, d: int, seed) -> DriverPaths:
    """Seeded i.i.d. standard-normal driver of shape (n_paths, T, d)."""
    if n_paths < 1 or T < 1 or d < 1:
        raise ValueError(f"driver dimensions must be positive, got {(n_paths, T, d)}")
    data = sample_normal_blocks(n_paths, T * d, seed).reshape(n_paths, T, d)
    return DriverPaths(data, seed)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, DriverPaths) else np.asarray(x, dtype=float)


def correlate_driver(x, cfg: EsgConfig) -> np.ndarray:
    """Return the correlated driver X' with the same shape as ``x``."""
    x = _as_array(x)
    d = x.shape[-1]
    if d != cfg.d:
        raise ConfigError(f"driver has d={d} but config expects d={cfg.d}")
    xc = x.copy()
    x1 = x[..., RATE]
    if d > CASH:
        rho = cfg._hw["rho_ry"]
        xc[..., CASH] = rho * x1 + np.sqrt(1 - rho**2) * x[..., CASH]
    for comp, rho in ((EQUITY, cfg.rho_eq_rate), (REAL_ESTATE, cfg.rho_re_rate)):
        if d > comp:
            xc[..., comp] = rho * x1 + np.sqrt(max(0.0, 1 - rho**2)) * x[..., comp]
    return xc


def simulate_rates(x, cfg: EsgConfig, x_corr=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact annual simulation of (r_t, Y_t), each of shape (n, T+1)."""
    x = _as_array(x)
    if x.shape[-1] < 2:
        raise ConfigError("rates need at least two driver components")
    if x_corr is None:
        x_corr = correlate_driver(x, cfg)
    hw = cfg._hw
    n, T = x.shape[0], x.shape[1]
    r = np.empty((n, T + 1))
    y = np.empty((n, T + 1))
    r[:, 0] = cfg.r0
    y[:, 0] = 0.0
    for t in range(T):
        r[:, t + 1] = hw["decay"] * r[:, t] + hw["drift_r"] + hw["std_r"] * x[:, t, RATE]
        y[:, t + 1] = y[:, t] + hw["a1"] * r[:, t] + hw["drift_y"] + hw["std_y"] * x_corr[:, t, CASH]
    return r, y


def bond_coefficients(tau, cfg: EsgConfig):
    """(A, C) with B(t, t+tau) = exp(-A r_t + C) under constant b0."""
    tau = np.asarray(tau, dtype=float)
    k, s = cfg.kappa, cfg.sigma_r
    a = (1 - np.exp(-k * tau)) / k
    kh = cfg.b0 * (tau - a)
    c = -kh + s**2 / (2 * k**2) * (tau + (1 - np.exp(-2 * k * tau)) / (2 * k) + 2 / k * (np.exp(-k * tau) - 1))
    return a, c


def bond_price(r_t, t, maturity, cfg: EsgConfig):
    """Zero-coupon bond price at ``t`` for ``maturity`` given short rate ``r_t``."""
    tau = np.asarray(maturity, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau < 0):
        raise ValueError(f"maturity {maturity} precedes valuation time {t}")
    a, c = bond_coefficients(tau, cfg)
    return np.exp(-a * np.asarray(r_t) + c)


def simulate_indices(x_corr, cash: np.ndarray, cfg: EsgConfig):
    """Equity and real-estate index paths (n, T+1); RE is None when d < 4."""
    x_corr = _as_array(x_corr)
    n, T, d = x_corr.shape
    out = []
    for comp, vol, level in ((EQUITY, cfg.sigma_eq, cfg.eq0), (REAL_ESTATE, cfg.sigma_re, cfg.re0)):
        if d <= comp:
            out.append(None)
            continue
        log_s = np.zeros((n, T + 1))
        log_s[:, 1:] = np.cumsum(-0.5 * vol**2 + vol * x_corr[:, :, comp], axis=1)
        out.append(level * cash * np.exp(log_s))
    return out[0], out[1]


def simulate_mortality(x, cfg: EsgConfig) -> np.ndarray:
    """Lee-Carter period index k(t), shape (n, T+1)."""
    x = _as_array(x)
    if x.shape[-1] <= MORTALITY:
        raise ConfigError("mortality needs d = 5")
    n, T = x.shape[0], x.shape[1]
    k = np.empty((n, T + 1))
    k[:, 0] = cfg.lc_k0
    k[:, 1:] = cfg.lc_k0 + np.cumsum(cfg.lc_drift + cfg.lc_eps_sigma * x[:, :, MORTALITY], axis=1)
    return k


_Q_MAX = np.nextafter(1.0, 0.0)


def death_rate(ages, k, cfg: EsgConfig) -> np.ndarray:
    """q_x = 1 - exp(-exp(a_x + b_x k)); broadcasts ``ages`` against ``k``."""
    a, b = cfg.lc_params(ages)
    m = np.exp(a + b * np.asarray(k))
    # keep q strictly inside (0, 1) when m is huge or tiny in floating point
    return np.clip(-np.expm1(-m), np.finfo(float).tiny, _Q_MAX)


@dataclass
class EconomicPaths:
    cfg: EsgConfig
    short_rate: np.ndarray
    log_cash: np.ndarray
    eq_index: np.ndarray | None
    re_index: np.ndarray | None
    lc_state: np.ndarray | None

    @property
    def cash(self) -> np.ndarray:
        return np.exp(self.log_cash)

    @property
    def T(self) -> int:
        return self.short_rate.shape[1] - 1

    @property
    def n_paths(self) -> int:
        return self.short_rate.shape[0]

    def bond(self, t: int, maturity: float) -> np.ndarray:
        return bond_price(self.short_rate[:, t], t, maturity, self.cfg)

    def death_rate(self, age, t: int) -> np.ndarray:
        """q over period (t-1, t]: shape (n,) for a scalar age, (n, n_ages) otherwise."""
        if self.lc_state is None:
            raise ConfigError("paths were generated without a mortality driver")
        k = self.lc_state[:, t]
        if np.ndim(age) == 0:
            return death_rate(age, k, self.cfg)
        return death_rate(np.asarray(age)[None, :], k[:, None], self.cfg)


def simulate(x, cfg: EsgConfig) -> EconomicPaths:
    x = _as_array(x)
    x_corr = correlate_driver(x, cfg)
    r, y = simulate_rates(x, cfg, x_corr)
    eq, re = simulate_indices(x_corr, np.exp(y), cfg)
    k = simulate_mortality(x, cfg) if x.shape[-1] > MORTALITY else None
    return EconomicPaths(cfg, r, y, eq, re, k)
