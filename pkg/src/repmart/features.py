"""Feature maps with closed-form Gaussian conditional expectations.

Three families act on a flattened driver ``x`` of length ``d*T`` (time-major,
component-minor):

* ``FullHermite``: products of probabilists' Hermite polynomials of total
  degree at most ``delta`` in all ``d*T`` coordinates.
* ``PolyLDR``: the same basis on ``R^p`` composed with a Stiefel projection,
  ``g(A^T x)``.
* ``ReluNet``: ``(a_i^T x + b_i)^+`` with one frozen pure-bias node.

``conditional_expectation(prefix, t)`` returns ``E[phi(x_{1:t}, X_{t+1:T})]``
for a standard normal future ``X``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.stats import norm


class BasisTooLargeError(ValueError):
    pass


def basis_size(q: int, delta: int) -> int:
    """Number of monomials of total degree <= delta in q variables."""
    if q < 1 or delta < 0:
        raise ValueError(f"need q >= 1 and delta >= 0, got q={q}, delta={delta}")
    m = math.comb(q + delta, q)
    if m >= 2**63:
        raise OverflowError(f"basis size binom({q + delta}, {q}) exceeds 2^63")
    return m


def check_basis_size(q: int, delta: int, max_size: int | None) -> int:
    m = basis_size(q, delta)
    if max_size is not None and m > max_size:
        raise BasisTooLargeError(
            f"basis of degree {delta} in {q} variables has {m:,} elements, "
            f"above the configured cap of {max_size:,}"
        )
    return m


def stiefel_dimension(n: int, p: int) -> int:
    return n * p - p * (p + 1) // 2


def ldr_parameter_count(d: int, T: int, p: int, delta: int) -> int:
    return stiefel_dimension(d * T, p) + basis_size(p, delta)


# ---------------------------------------------------------------------------
# multi-indices and Hermite polynomials


class MultiIndexBasis:
    """All multi-indices of total degree <= delta in q variables.

    Ordered by degree, then lexicographically (descending exponent vector),
    so ``e_0`` precedes ``e_1``. Stored sparsely: each element keeps at most
    ``delta`` (coordinate, degree) pairs.
    """

    def __init__(self, q: int, delta: int, max_size: int | None = None):
        m = check_basis_size(q, delta, max_size)
        self.q, self.delta, self.size = q, delta, m
        width = max(delta, 1)
        coords = np.zeros((m, width), dtype=np.int64)
        degs = np.zeros((m, width), dtype=np.int64)
        i = 0
        for k in range(delta + 1):
            for combo in itertools.combinations_with_replacement(range(q), k):
                for slot, (c, g) in enumerate(_runs(combo)):
                    coords[i, slot] = c
                    degs[i, slot] = g
                i += 1
        self.coords, self.degs = coords, degs
        self.total_degree = degs.sum(axis=1)
        # last coordinate each element touches; constants map to -1
        self.max_coord = np.where(degs > 0, coords, -1).max(axis=1)

    def __len__(self):
        return self.size

    @cached_property
    def alphas(self) -> np.ndarray:
        """Dense (m, q) exponent array."""
        out = np.zeros((self.size, self.q), dtype=np.int64)
        rows = np.repeat(np.arange(self.size), self.coords.shape[1])
        np.add.at(out, (rows, self.coords.ravel()), self.degs.ravel())
        return out

    def index_of(self, alpha) -> int:
        alpha = tuple(int(a) for a in alpha)
        return self._lookup[alpha]

    @cached_property
    def _lookup(self) -> dict:
        return {tuple(a): i for i, a in enumerate(self.alphas)}


def _runs(combo):
    for c, grp in itertools.groupby(combo):
        yield c, len(list(grp))


def hermite_table(x: np.ndarray, delta: int) -> np.ndarray:
    """He_k(x) for k = 0..delta, stacked on a new last axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (delta + 1,))
    out[..., 0] = 1.0
    if delta >= 1:
        out[..., 1] = x
    for k in range(1, delta):
        out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    return out


def hermite_coefficients(delta: int) -> np.ndarray:
    """c[k, j] = coefficient of y^j in He_k(y)."""
    c = np.zeros((delta + 1, delta + 1))
    c[0, 0] = 1.0
    if delta >= 1:
        c[1, 1] = 1.0
    for k in range(1, delta):
        c[k + 1, 1:] = c[k, :-1]
        c[k + 1] -= k * c[k - 1]
    return c


def _basis_product(table: np.ndarray, basis: MultiIndexBasis, cols=None) -> np.ndarray:
    coords, degs = basis.coords, basis.degs
    if cols is not None:
        coords, degs = coords[cols], degs[cols]
    out = table[:, coords[:, 0], degs[:, 0]]
    for slot in range(1, coords.shape[1]):
        out = out * table[:, coords[:, slot], degs[:, slot]]
    return out


def eval_hermite_features(x: np.ndarray, basis: MultiIndexBasis, cols=None) -> np.ndarray:
    """Hermite-product features, shape (n, m). ``E[phi_i^2] = prod(alpha!)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != basis.q:
        raise ValueError(f"expected {basis.q} coordinates, got {x.shape[1]}")
    return _basis_product(hermite_table(x, basis.delta), basis, cols)


def hermite_gradient(z: np.ndarray, basis: MultiIndexBasis) -> np.ndarray:
    """d phi_i / d z_j as an (n, m, q) array."""
    z = np.atleast_2d(z)
    n = z.shape[0]
    table = hermite_table(z, basis.delta)
    dtable = np.zeros_like(table)
    for k in range(1, basis.delta + 1):
        dtable[..., k] = k * table[..., k - 1]
    coords, degs = basis.coords, basis.degs
    grad = np.zeros((n, basis.size, basis.q))
    n_slots = coords.shape[1]
    for slot in range(n_slots):
        part = dtable[:, coords[:, slot], degs[:, slot]]
        for other in range(n_slots):
            if other != slot:
                part = part * table[:, coords[:, other], degs[:, other]]
        active = degs[:, slot] > 0
        idx = np.nonzero(active)[0]
        grad[:, idx, coords[idx, slot]] += part[:, idx]
    return grad


def hermite_conditional_expectation(prefix: np.ndarray, basis: MultiIndexBasis, t: int, d: int) -> np.ndarray:
    """Closed-form E[phi(x_{1:t}, X_{t+1:T})] for the full Hermite basis.

    Elements touching any future coordinate have zero mean; the rest are
    evaluated on the observed prefix.
    """
    prefix = np.atleast_2d(np.asarray(prefix, dtype=float))
    n = prefix.shape[0]
    known = t * d
    if prefix.shape[1] < known:
        raise ValueError(f"prefix has {prefix.shape[1]} coordinates, need {known}")
    out = np.zeros((n, basis.size))
    cols = np.nonzero(basis.max_coord < known)[0]
    if known == 0:
        out[:, cols] = 1.0
        return out
    table = hermite_table(prefix[:, :known], basis.delta)
    out[:, cols] = _basis_product(table, basis, cols)
    return out


# ---------------------------------------------------------------------------
# Kan decomposition of monomials into powers of linear forms


def kan_monomial_decomposition(alpha) -> list[tuple[float, np.ndarray, int]]:
    """Terms (coef, h, k) with y^alpha = sum coef * (h . y)^k, k = |alpha|.

    Pairs nu and alpha - nu give opposite h and identical contributions, so
    only one of each pair is kept with a doubled coefficient; a zero h
    contributes nothing and is dropped.
    """
    alpha = np.asarray(alpha, dtype=np.int64)
    k = int(alpha.sum())
    if k == 0:
        raise ValueError("the constant monomial has no Kan decomposition")
    terms = []
    seen = set()
    for nu in itertools.product(*(range(a + 1) for a in alpha)):
        nu = np.asarray(nu)
        key = tuple(nu)
        mirror = tuple(alpha - nu)
        if mirror in seen:
            continue
        seen.add(key)
        h = alpha / 2.0 - nu
        if not h.any():
            continue
        coef = (-1.0) ** nu.sum() * np.prod([math.comb(int(a), int(v)) for a, v in zip(alpha, nu)]) / math.factorial(k)
        if mirror != key:
            coef *= 2.0
        terms.append((coef, h, k))
    return terms


def normal_moment(mean, std, k: int):
    """E[(mean + std Z)^k] for Z ~ N(0, 1)."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = np.zeros(np.broadcast(mean, std).shape)
    for j in range(0, k + 1, 2):
        dfact = float(np.prod(np.arange(j - 1, 0, -2))) if j > 0 else 1.0
        out = out + math.comb(k, j) * mean ** (k - j) * std**j * dfact
    return out


class _KanPlan:
    """Precomputed Kan terms for every non-constant monomial of a basis."""

    def __init__(self, basis: MultiIndexBasis):
        hs, coefs, powers, owner = [], [], [], []
        for i, alpha in enumerate(basis.alphas):
            if alpha.sum() == 0:
                continue
            for coef, h, k in kan_monomial_decomposition(alpha):
                hs.append(h)
                coefs.append(coef)
                powers.append(k)
                owner.append(i)
        self.h = np.array(hs).reshape(-1, basis.q)
        self.coef = np.array(coefs)
        self.power = np.array(powers)
        self.owner = np.array(owner, dtype=np.int64)
        self.size = basis.size
        self.scatter = np.zeros((len(owner), basis.size))
        self.scatter[np.arange(len(owner)), self.owner] = 1.0
        self.constant = np.nonzero(basis.total_degree == 0)[0]

    def moments(self, mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
        """E[Y^gamma] for Y ~ N(mu_row, cov), shape (n, m)."""
        n = mu.shape[0]
        out = np.zeros((n, self.size))
        out[:, self.constant] = 1.0
        if self.h.shape[0] == 0:
            return out
        loc = mu @ self.h.T
        scale = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", self.h, cov, self.h), 0.0))
        contrib = np.empty_like(loc)
        for k in np.unique(self.power):
            sel = self.power == k
            contrib[:, sel] = normal_moment(loc[:, sel], scale[sel], int(k))
        contrib *= self.coef
        return out + contrib @ self.scatter


# ---------------------------------------------------------------------------
# feature map specifications


def _check_x(x, dims):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dims:
        raise ValueError(f"expected samples in R^{dims}, got width {x.shape[1]}")
    return x


def _check_prefix(prefix, t, d, T):
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 3:
        prefix = prefix.reshape(prefix.shape[0], -1)
    prefix = np.atleast_2d(prefix)
    if prefix.shape[1] < t * d:
        raise ValueError(f"prefix width {prefix.shape[1]} < t*d = {t * d}")
    return prefix[:, : t * d]


@dataclass
class FullHermite:
    d: int
    T: int
    delta: int = 3
    max_size: int | None = None

    kind = "full_hermite"

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        self.basis = MultiIndexBasis(self.d * self.T, self.delta, self.max_size)

    @property
    def dims(self) -> int:
        return self.d * self.T

    @property
    def n_features(self) -> int:
        return self.basis.size

    def features(self, x) -> np.ndarray:
        return eval_hermite_features(_check_x(x, self.dims), self.basis)

    def conditional_expectation(self, prefix, t: int) -> np.ndarray:
        prefix = _check_prefix(prefix, t, self.d, self.T)
        return hermite_conditional_expectation(prefix, self.basis, t, self.d)

    def active_columns(self, t: int) -> np.ndarray:
        """Columns whose conditional expectation at t can be nonzero."""
        return np.nonzero(self.basis.max_coord < t * self.d)[0]

    def conditional_value(self, prefix, t: int, beta) -> np.ndarray:
        """G_t(prefix) @ beta touching only the active columns."""
        prefix = _check_prefix(prefix, t, self.d, self.T)
        cols = self.active_columns(t)
        beta = np.asarray(beta)
        if t == 0:
            return np.full(prefix.shape[0], beta[cols].sum())
        table = hermite_table(prefix, self.delta)
        return _basis_product(table, self.basis, cols) @ beta[cols]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "T": self.T, "delta": self.delta}


@dataclass
class PolyLDR:
    """Hermite-product basis of degree <= delta on R^p composed with A^T x."""

    d: int
    T: int
    A: np.ndarray
    delta: int = 3

    kind = "poly_ldr"

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.d * self.T:
            raise ValueError(f"A must be (d*T, p) = ({self.d * self.T}, p), got {self.A.shape}")
        if self.p > self.dims:
            raise ValueError("p must not exceed d*T")
        err = np.abs(self.A.T @ self.A - np.eye(self.p)).max()
        if err > 1e-10:
            raise ValueError(f"A is not on the Stiefel manifold (max |A^T A - I| = {err:.2e})")
        self.basis = MultiIndexBasis(self.p, self.delta)

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> int:
        return self.d * self.T

    @property
    def n_features(self) -> int:
        return self.basis.size

    def features(self, x) -> np.ndarray:
        return eval_hermite_features(_check_x(x, self.dims) @ self.A, self.basis)

    @cached_property
    def _kan(self) -> _KanPlan:
        return _KanPlan(self.basis)

    @cached_property
    def _to_monomial(self) -> np.ndarray:
        """M[i, j]: coefficient of monomial j in Hermite element i."""
        return hermite_to_monomial(self.basis)

    def conditional_expectation(self, prefix, t: int) -> np.ndarray:
        prefix = _check_prefix(prefix, t, self.d, self.T)
        known = t * self.d
        mu = prefix @ self.A[:known] if known else np.zeros((prefix.shape[0], self.p))
        tail = self.A[known:]
        cov = tail.T @ tail
        mono = self._kan.moments(mu, cov)
        return mono @ self._to_monomial.T

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "T": self.T, "delta": self.delta, "A": self.A.tolist()}


def hermite_to_monomial(basis: MultiIndexBasis) -> np.ndarray:
    coeff = hermite_coefficients(basis.delta)
    alphas = basis.alphas
    out = np.zeros((basis.size, basis.size))
    for i, alpha in enumerate(alphas):
        for gamma in itertools.product(*(range(a + 1) for a in alpha)):
            c = np.prod([coeff[a, g] for a, g in zip(alpha, gamma)])
            if c != 0:
                out[i, basis.index_of(gamma)] = c
    return out


@dataclass
class ReluNet:
    """Shallow ReLU features; column ``bias_node`` is the frozen constant."""

    d: int
    T: int
    A: np.ndarray  # (d*T, m)
    b: np.ndarray  # (m,)
    bias_node: int | None = -1

    kind = "relu_net"

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.d * self.T:
            raise ValueError(f"A must have d*T = {self.d * self.T} rows, got {self.A.shape}")
        if self.b.shape != (self.A.shape[1],):
            raise ValueError("b must have one entry per node")
        if self.bias_node is not None:
            self.bias_node = int(self.bias_node) % self.m

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> int:
        return self.d * self.T

    @property
    def n_features(self) -> int:
        return self.m

    def features(self, x) -> np.ndarray:
        return np.maximum(_check_x(x, self.dims) @ self.A + self.b, 0.0)

    def conditional_expectation(self, prefix, t: int) -> np.ndarray:
        prefix = _check_prefix(prefix, t, self.d, self.T)
        known = t * self.d
        mu = prefix @ self.A[:known] + self.b if known else np.broadcast_to(self.b, (prefix.shape[0], self.m))
        sigma = np.sqrt((self.A[known:] ** 2).sum(axis=0))
        return positive_part_mean(mu, sigma)

    def normalized(self) -> tuple["ReluNet", np.ndarray]:
        """Unit-norm (a_i, b_i) columns and the per-node scales removed."""
        scale = np.sqrt((self.A**2).sum(axis=0) + self.b**2)
        scale = np.where(scale > 0, scale, 1.0)
        return ReluNet(self.d, self.T, self.A / scale, self.b / scale, self.bias_node), scale

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "d": self.d, "T": self.T,
            "A": self.A.tolist(), "b": self.b.tolist(), "bias_node": self.bias_node,
        }


def positive_part_mean(mu, sigma) -> np.ndarray:
    """E[(mu + sigma Z)^+], the Bachelier call price at strike zero."""
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    shape = mu.shape
    mu, sigma = mu.reshape(-1), sigma.reshape(-1)
    out = np.maximum(mu, 0.0)
    pos = sigma > 0
    if np.any(pos):
        s = sigma[pos]
        z = mu[pos] / s
        out[pos] = mu[pos] * norm.cdf(z) + s * norm.pdf(z)
    return out.reshape(shape) if shape else float(out[0])


FeatureMapSpec = FullHermite | PolyLDR | ReluNet


def relu_conditional_expectation(prefix, spec: ReluNet, t: int) -> np.ndarray:
    return spec.conditional_expectation(prefix, t)


def poly_ldr_conditional_expectation(prefix, spec: PolyLDR, t: int) -> np.ndarray:
    return spec.conditional_expectation(prefix, t)


def eval_features(x, spec) -> np.ndarray:
    return spec.features(x)


def spec_from_dict(data: dict):
    kind = data["kind"]
    if kind == "full_hermite":
        return FullHermite(int(data["d"]), int(data["T"]), int(data["delta"]))
    if kind == "poly_ldr":
        return PolyLDR(int(data["d"]), int(data["T"]), np.array(data["A"], dtype=float), int(data["delta"]))
    if kind == "relu_net":
        return ReluNet(int(data["d"]), int(data["T"]), np.array(data["A"], dtype=float),
                       np.array(data["b"], dtype=float), data.get("bias_node", -1))
    raise ValueError(f"unknown feature map kind {kind!r}")


def random_stiefel(n: int, p: int, rng) -> np.ndarray:
    """Uniform draw on V_p(R^n) as B (B^T B)^{-1/2}."""
    b = rng.standard_normal((n, p))
    w, v = np.linalg.eigh(b.T @ b)
    return b @ (v / np.sqrt(w)) @ v.T
