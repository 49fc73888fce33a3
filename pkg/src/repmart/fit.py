"""Learning replicating martingales from simulated samples.

Regress-later fits ``f(x) ~ phi_theta(x)^T beta`` on full driver paths and
values the portfolio through the closed-form conditional expectations of the
features. Regress-now fits the time-t value directly on the prefix.

For the Stiefel-parametrised polynomial family the coefficients are profiled
out: the optimiser sees ``A -> min_beta ||y - Phi_A beta||^2 / n`` and its
Riemannian gradient, obtained by the envelope theorem.
"""
from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, optimize

from . import features as feat
from .features import FullHermite, PolyLDR, ReluNet

log = logging.getLogger(__name__)

FAMILIES = ("full_hermite", "poly_ldr", "relu_net", "lasso_full_poly")
MODES = ("regress_later", "regress_now")
LDR_STARTS = ("folding", "diagonal", "random")


class SingularDesignError(np.linalg.LinAlgError):
    pass


class FitError(RuntimeError):
    """Numerical failure during training (non-finite loss and the like)."""


@dataclass
class TrainingSet:
    X: np.ndarray  # (n, d*T)
    y: np.ndarray  # (n,)
    d: int
    T: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 3:
            self.X = self.X.reshape(self.X.shape[0], -1)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape != (self.y.size, self.d * self.T):
            raise ValueError(f"X has shape {self.X.shape}, expected ({self.y.size}, {self.d * self.T})")
        if self.y.size < 1:
            raise ValueError("empty training set")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("training set contains non-finite entries")

    @property
    def n(self) -> int:
        return self.y.size

    def prefix(self, t: int) -> np.ndarray:
        return self.X[:, : t * self.d]


@dataclass
class FitConfig:
    mode: str = "regress_later"
    family: str = "full_hermite"
    delta: int = 3
    p: int = 3
    m: int = 101  # ReLU nodes including the pure-bias node
    ldr_start: str = "folding"
    grad_tol: float = 1e-6
    max_iter: int = 500
    relu_max_iter: int = 2000
    ridge_jitter: float = 1e-10
    allow_underdetermined: bool = False
    max_basis: int = 20_000
    # strong Wolfe constants shared by both optimisers
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.ldr_start not in LDR_STARTS:
            raise ValueError(f"ldr_start must be one of {LDR_STARTS}")
        if self.grad_tol <= 0 or self.max_iter <= 0 or self.ridge_jitter <= 0:
            raise ValueError("tolerances and iteration limits must be positive")
        if self.family == "relu_net" and self.m < 2:
            raise ValueError("relu_net needs m >= 2 (one node is the pure bias)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# ordinary least squares


@dataclass
class OlsResult:
    beta: np.ndarray
    residual: float  # ||y - Phi beta|| / sqrt(n)
    jitter_active: bool = False


def ols_fit(Phi: np.ndarray, y: np.ndarray, allow_underdetermined: bool = False,
            jitter: float = 1e-10) -> OlsResult:
    """Least-squares coefficients via a pivot-free QR of the design.

    Falls back to jittered normal equations (ridge ``jitter * trace / m``)
    when R is numerically singular and raises if that fails too. With
    ``allow_underdetermined`` an m > n design is solved by minimum norm.
    """
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = Phi.shape
    if m > n:
        if not allow_underdetermined:
            raise SingularDesignError(f"{m} features exceed {n} samples; pass allow_underdetermined")
        beta = linalg.lstsq(Phi, y, lapack_driver="gelsd")[0]
        return OlsResult(beta, float(np.linalg.norm(y - Phi @ beta) / np.sqrt(n)))
    q, r = np.linalg.qr(Phi)
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    if scale > 0 and diag.min() > 1e-12 * scale:
        beta = linalg.solve_triangular(r, q.T @ y)
        return OlsResult(beta, float(np.linalg.norm(y - Phi @ beta) / np.sqrt(n)))
    gram = Phi.T @ Phi / n
    ridge = jitter * np.trace(gram) / m
    try:
        c = linalg.cho_factor(gram + ridge * np.eye(m))
    except linalg.LinAlgError as exc:
        raise SingularDesignError(f"design singular even with ridge {ridge:.3e}") from exc
    beta = linalg.cho_solve(c, Phi.T @ y / n)
    if not np.isfinite(beta).all():
        raise SingularDesignError(f"non-finite coefficients with ridge {ridge:.3e}")
    log.info("normal-equation jitter active: ridge %.3e", ridge)
    return OlsResult(beta, float(np.linalg.norm(y - Phi @ beta) / np.sqrt(n)), True)


# ---------------------------------------------------------------------------
# fitted models


@dataclass
class ReplicatingMartingale:
    spec: object
    beta: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def terminal(self, x) -> np.ndarray:
        return self.spec.features(x) @ self.beta

    def value(self, prefix, t: int, chunk: int = 50_000) -> np.ndarray:
        """V_t = G_t(x_{1:t})^T beta, evaluated in row chunks."""
        prefix = np.asarray(prefix, dtype=float)
        if prefix.ndim == 3:
            prefix = prefix.reshape(prefix.shape[0], -1)
        prefix = np.atleast_2d(prefix)
        if not 0 <= t <= self.spec.T:
            raise ValueError(f"horizon t={t} outside [0, {self.spec.T}]")
        out = np.empty(prefix.shape[0])
        for lo in range(0, prefix.shape[0], chunk):
            block = prefix[lo:lo + chunk]
            if isinstance(self.spec, FullHermite):
                out[lo:lo + chunk] = self.spec.conditional_value(block, t, self.beta)
            else:
                out[lo:lo + chunk] = self.spec.conditional_expectation(block, t) @ self.beta
        return out

    @property
    def v0(self) -> float:
        return float(self.value(np.zeros((1, 0)), 0)[0])

    def to_dict(self) -> dict:
        return {
            "kind": "replicating_martingale",
            "spec": self.spec.to_dict(),
            "beta": self.beta.tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReplicatingMartingale":
        return cls(feat.spec_from_dict(data["spec"]), np.array(data["beta"], dtype=float),
                   data.get("diagnostics", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ReplicatingMartingale":
        with open(path) as fh:
            data = json.load(fh)
        if data.get("kind") == "regress_now":
            return RegressNowModel.from_dict(data)
        return cls.from_dict(data)


@dataclass
class RegressNowModel:
    """Direct estimator of V_t on the first t periods; V_0 is the sample mean."""

    spec: object  # feature map over the d*t prefix coordinates
    beta: np.ndarray
    t: int
    v0_hat: float
    diagnostics: dict = field(default_factory=dict)

    def value(self, prefix, t: int | None = None) -> np.ndarray:
        if self.t == 0 and t in (None, 0):
            return np.full(np.atleast_2d(prefix).shape[0], self.v0_hat)
        if t is not None and t != self.t:
            if t == 0:
                return np.full(np.atleast_2d(prefix).shape[0], self.v0_hat)
            raise ValueError(f"regress-now model was fitted at t={self.t}, not {t}")
        prefix = np.asarray(prefix, dtype=float)
        if prefix.ndim == 3:
            prefix = prefix.reshape(prefix.shape[0], -1)
        return self.spec.features(prefix[:, : self.spec.dims]) @ self.beta

    @property
    def v0(self) -> float:
        return self.v0_hat

    def to_dict(self) -> dict:
        return {
            "kind": "regress_now", "t": self.t, "v0": self.v0_hat,
            "spec": self.spec.to_dict(), "beta": self.beta.tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressNowModel":
        return cls(feat.spec_from_dict(data["spec"]), np.array(data["beta"], dtype=float),
                   int(data["t"]), float(data["v0"]), data.get("diagnostics", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Stiefel manifold helpers and starting points


def stiefel_project(A: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Orthogonal projection of Z onto the tangent space at A."""
    sym = A.T @ Z
    return Z - A @ (0.5 * (sym + sym.T))


def stiefel_retract(A: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Polar retraction: the orthonormal factor of A + xi."""
    u, _, vt = np.linalg.svd(A + xi, full_matrices=False)
    return u @ vt


def make_ldr_start(kind: str, d: int, T: int, p: int, seed=0) -> np.ndarray:
    """Starting frame in V_p(R^{dT}).

    ``folding`` with p = k*d keeps the first k-1 periods on their own
    coordinates and sums the remaining periods per component with weight
    1/sqrt(#periods); ``diagonal`` is the identity with the trailing
    coordinates pooled into the last column.
    """
    n = d * T
    if not 1 <= p <= n:
        raise ValueError(f"need 1 <= p <= d*T = {n}, got {p}")
    if kind == "random":
        return feat.random_stiefel(n, p, np.random.default_rng(seed))
    A = np.zeros((n, p))
    if kind == "diagonal":
        for i in range(p - 1):
            A[i, i] = 1.0
        A[p - 1:, p - 1] = 1.0 / np.sqrt(n - p + 1)
        return A
    if kind == "folding":
        if p % d or p // d > T:
            raise ValueError(f"folding needs p to be a multiple of d={d} with p/d <= T={T}, got p={p}")
        k = p // d
        for t in range(k - 1):
            for j in range(d):
                A[t * d + j, t * d + j] = 1.0
        rest = T - (k - 1)
        for t in range(k - 1, T):
            for j in range(d):
                A[t * d + j, (k - 1) * d + j] = 1.0 / np.sqrt(rest)
        return A
    raise ValueError(f"unknown start kind {kind!r}; choose from {LDR_STARTS}")


# ---------------------------------------------------------------------------
# Riemannian BFGS on the Stiefel manifold


@dataclass
class StiefelResult:
    A: np.ndarray
    loss: float
    grad_norm: float
    n_iter: int
    history: list
    converged: bool
    line_search_failed: bool = False
    max_iter_reached: bool = False


def _wolfe_search(obj, A, f0, g0, eta, c1, c2, alpha0=1.0, max_eval=25):
    """Strong-Wolfe step along the retraction curve A -> R(A, alpha eta).

    Returns (alpha, A_new, f_new, egrad_new, rgrad_new) or None. The slope at
    a trial point is <grad, P(eta)>, i.e. eta moved by projection.
    """
    slope0 = float(np.sum(g0 * eta))
    cache = {}

    def phi(alpha):
        if alpha not in cache:
            An = stiefel_retract(A, alpha * eta)
            f, eg = obj(An)
            rg = stiefel_project(An, eg)
            d = float(np.sum(rg * stiefel_project(An, eta)))
            cache[alpha] = (An, f, eg, rg, d)
        return cache[alpha]

    def pack(alpha):
        An, f, eg, rg, _ = phi(alpha)
        return alpha, An, f, eg, rg

    def zoom(lo, hi, f_lo):
        for _ in range(max_eval):
            a = 0.5 * (lo + hi)
            _, f, _, _, d = phi(a)
            if not np.isfinite(f) or f > f0 + c1 * a * slope0 or f >= f_lo:
                hi = a
            else:
                if abs(d) <= -c2 * slope0:
                    return pack(a)
                if d * (hi - lo) >= 0:
                    hi = lo
                lo, f_lo = a, f
            if abs(hi - lo) < 1e-14:
                break
        return None

    prev, f_prev = 0.0, f0
    alpha = alpha0
    for i in range(max_eval):
        _, f, _, _, d = phi(alpha)
        if not np.isfinite(f) or f > f0 + c1 * alpha * slope0 or (i > 0 and f >= f_prev):
            res = zoom(prev, alpha, f_prev)
            break
        if abs(d) <= -c2 * slope0:
            return pack(alpha)
        if d >= 0:
            res = zoom(alpha, prev, f)
            break
        prev, f_prev = alpha, f
        alpha *= 2.0
    else:
        res = None
    if res is not None:
        return res
    # fall back to the best Armijo point seen
    ok = [(v[1], a) for a, v in cache.items() if np.isfinite(v[1]) and v[1] <= f0 + c1 * a * slope0 and v[1] < f0]
    if ok:
        return pack(min(ok)[1])
    return None


def riemannian_bfgs_stiefel(objective, A0: np.ndarray, grad_tol: float = 1e-6, max_iter: int = 500,
                            c1: float = 1e-4, c2: float = 0.9, f_tol: float = 1e-14, callback=None) -> StiefelResult:
    """Minimise ``objective(A) -> (loss, euclidean_grad)`` over A^T A = I.

    A dense inverse-Hessian approximation lives on the ambient space of
    vec(A); it is moved between tangent spaces by projection and updated
    with the standard BFGS formula whenever the curvature pair is positive.
    """
    A = np.array(A0, dtype=float)
    if np.abs(A.T @ A - np.eye(A.shape[1])).max() > 1e-10:
        raise ValueError("starting point is not on the Stiefel manifold")
    shape = A.shape
    N = A.size
    f, eg = objective(A)
    if not np.isfinite(f):
        raise FitError("objective is not finite at the starting point")
    g = stiefel_project(A, eg)
    H = None
    history = [float(f)]
    it = 0
    flags = dict(line_search_failed=False, max_iter_reached=False)
    converged = False

    def transport(M, An):
        # P H P with P the projection at An, applied column- and row-wise
        cols = np.stack([stiefel_project(An, c.reshape(shape)).ravel() for c in M.T], axis=1)
        return np.stack([stiefel_project(An, r.reshape(shape)).ravel() for r in cols], axis=0)

    while True:
        gnorm = float(np.linalg.norm(g))
        if gnorm < grad_tol:
            converged = True
            break
        if it >= max_iter:
            flags["max_iter_reached"] = True
            break
        it += 1
        if H is None:
            eta = -g
        else:
            eta = -stiefel_project(A, (H @ g.ravel()).reshape(shape))
            if np.sum(eta * g) >= 0:
                H, eta = None, -g
        alpha0 = 1.0 if H is not None else min(1.0, 1.0 / gnorm)
        step = _wolfe_search(objective, A, f, g, eta, c1, c2, alpha0)
        if step is None and H is not None:
            H, eta = None, -g
            step = _wolfe_search(objective, A, f, g, eta, c1, c2, min(1.0, 1.0 / gnorm))
        if step is None:
            flags["line_search_failed"] = True
            log.warning("line search failed at iteration %d; keeping best iterate", it)
            break
        alpha, An, fn, egn, gn = step
        s = stiefel_project(An, alpha * eta).ravel()
        yv = (gn - stiefel_project(An, g)).ravel()
        sy = float(s @ yv)
        if H is not None:
            H = transport(H, An)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if H is None:
                H = (sy / float(yv @ yv)) * np.eye(N)
                H = transport(H, An)
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho**2 * float(yv @ Hy) + rho) * np.outer(s, s)
        df = f - fn
        A, f, g = An, fn, gn
        history.append(float(f))
        if callback is not None:
            callback(A, f)
        if df <= f_tol * max(1.0, abs(f)):
            converged = True
            break
    return StiefelResult(A, float(f), float(np.linalg.norm(g)), it, history, converged, **flags)


def ldr_objective(X: np.ndarray, y: np.ndarray, delta: int, jitter: float = 1e-10):
    """Concentrated LDR loss A -> ||y - Phi_A beta_A||^2 / n and its gradient."""
    n, dims = X.shape
    cache = {}

    def objective(A):
        p = A.shape[1]
        basis = cache.get(p)
        if basis is None:
            basis = cache[p] = feat.MultiIndexBasis(p, delta)
        Z = X @ A
        Phi = feat.eval_hermite_features(Z, basis)
        beta = ols_fit(Phi, y, jitter=jitter).beta
        r = y - Phi @ beta
        loss = float(r @ r / n)
        W = _poly_gradient(Z, basis, beta)  # d(Phi beta)/dz, (n, p)
        egrad = -(2.0 / n) * (X.T @ (r[:, None] * W))
        return loss, egrad

    return objective


def _poly_gradient(Z, basis, beta):
    """Gradient in z of sum_i beta_i g_i(z) without forming (n, m, p)."""
    table = feat.hermite_table(Z, basis.delta)
    dtable = np.zeros_like(table)
    for k in range(1, basis.delta + 1):
        dtable[..., k] = k * table[..., k - 1]
    coords, degs = basis.coords, basis.degs
    n_slots = coords.shape[1]
    out = np.zeros(Z.shape)
    for slot in range(n_slots):
        active = degs[:, slot] > 0
        if not active.any():
            continue
        c, g = coords[active], degs[active]
        part = dtable[:, c[:, slot], g[:, slot]]
        for other in range(n_slots):
            if other != slot:
                part = part * table[:, c[:, other], g[:, other]]
        onehot = np.zeros((c.shape[0], Z.shape[1]))
        onehot[np.arange(c.shape[0]), c[:, slot]] = 1.0
        out += (part * beta[active]) @ onehot
    return out


def fit_poly_ldr(train: TrainingSet, cfg: FitConfig, A0=None) -> ReplicatingMartingale:
    X, y = train.X, train.y
    y_scale = float(np.std(y)) or 1.0
    if A0 is None:
        A0 = make_ldr_start(cfg.ldr_start, train.d, train.T, cfg.p, cfg.seed)
    objective = ldr_objective(X, y / y_scale, cfg.delta, cfg.ridge_jitter)
    res = riemannian_bfgs_stiefel(objective, A0, cfg.grad_tol, cfg.max_iter, cfg.wolfe_c1, cfg.wolfe_c2)
    spec = PolyLDR(train.d, train.T, res.A, cfg.delta)
    ols = ols_fit(spec.features(X), y, jitter=cfg.ridge_jitter)
    diag = dict(
        residual=ols.residual, iterations=res.n_iter, loss_history=[h * y_scale**2 for h in res.history],
        grad_norm=res.grad_norm, converged=res.converged, line_search_failed=res.line_search_failed,
        max_iter_reached=res.max_iter_reached, jitter_active=ols.jitter_active,
    )
    return ReplicatingMartingale(spec, ols.beta, diag)


# ---------------------------------------------------------------------------
# shallow ReLU network


def _relu_unpack(theta, dims, k):
    A = theta[: dims * k].reshape(dims, k)
    b = theta[dims * k: dims * k + k]
    beta = theta[dims * k + k:]
    return A, b, beta


def relu_loss_and_grad(theta, X, y, k):
    """Mean squared error of (XA + b)^+ beta_nodes + beta_bias and its gradient.

    ``k`` trainable nodes; the last entry of beta multiplies the frozen
    pure-bias feature (constant one). The kink subgradient is zero.
    """
    n, dims = X.shape
    A, b, beta = _relu_unpack(theta, dims, k)
    Z = X @ A + b
    H = np.maximum(Z, 0.0)
    r = H @ beta[:k] + beta[k] - y
    loss = float(r @ r / n)
    gr = (2.0 / n) * r
    g_beta = np.concatenate([H.T @ gr, [gr.sum()]])
    dZ = np.outer(gr, beta[:k]) * (Z > 0)
    g_A = X.T @ dZ
    g_b = dZ.sum(axis=0)
    return loss, np.concatenate([g_A.ravel(), g_b, g_beta])


def train_relu_net(train: TrainingSet, cfg: FitConfig, init: tuple | None = None, dims_T: int | None = None):
    """Joint quasi-Newton training of (A, b, beta); returns (ReluNet, beta, diagnostics).

    Targets are standardised for the optimiser; after training every node
    is rescaled to a unit (a_i, b_i) and beta is refitted by least squares.
    """
    X, y = train.X, train.y
    T_eff = dims_T or train.T
    n, dims = X.shape
    k = cfg.m - 1
    y_mean, y_scale = float(np.mean(y)), float(np.std(y)) or 1.0
    ys = (y - y_mean) / y_scale
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        bound = np.sqrt(6.0 / (dims + 1 + k))
        A = rng.uniform(-bound, bound, (dims, k))
        b = rng.uniform(-bound, bound, k)
        H = np.maximum(X @ A + b, 0.0)
        design = np.column_stack([H, np.ones(n)])
        beta = linalg.lstsq(design, ys, lapack_driver="gelsd")[0]
    else:
        spec0, beta0 = init
        nodes = [i for i in range(spec0.m) if i != spec0.bias_node]
        A, b = spec0.A[:, nodes], spec0.b[nodes]
        bias_val = max(spec0.b[spec0.bias_node], 0.0) if spec0.bias_node is not None else 0.0
        beta = np.concatenate([beta0[nodes] / y_scale,
                               [(beta0[spec0.bias_node] * bias_val - y_mean) / y_scale]])
    theta0 = np.concatenate([A.ravel(), b, beta])
    history = []

    def fun(theta):
        loss, grad = relu_loss_and_grad(theta, X, ys, k)
        if not np.isfinite(loss):
            raise FitError(f"non-finite loss after {len(history)} evaluations")
        history.append(loss)
        return loss, grad

    res = optimize.minimize(
        fun, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": cfg.relu_max_iter, "maxfun": 2 * cfg.relu_max_iter, "ftol": 1e-15, "gtol": 1e-10},
    )
    A, b, _ = _relu_unpack(res.x, dims, k)
    A_full = np.column_stack([A, np.zeros(dims)])
    b_full = np.concatenate([b, [1.0]])
    spec, _ = ReluNet(train.d, T_eff, A_full, b_full, bias_node=-1).normalized()
    ols = ols_fit(spec.features(X), y, jitter=cfg.ridge_jitter)
    diag = dict(
        residual=ols.residual, iterations=int(res.nit), loss_history=[h * y_scale**2 for h in history[:: max(1, len(history) // 200)]],
        final_loss=float(res.fun) * y_scale**2, converged=bool(res.success),
        max_iter_reached=int(res.nit) >= cfg.relu_max_iter, message=str(res.message),
        jitter_active=ols.jitter_active,
    )
    return spec, ols.beta, diag


# ---------------------------------------------------------------------------
# lasso baseline


@dataclass
class LassoResult:
    beta: np.ndarray
    alpha: float
    alphas: np.ndarray
    aic: np.ndarray
    n_active: int


def _lasso_design(Phi):
    const = np.nonzero(np.ptp(Phi, axis=0) == 0)[0]
    const = [c for c in const if Phi[0, c] != 0]
    keep = np.setdiff1d(np.arange(Phi.shape[1]), const)
    return (const[0] if const else None), keep


def _lars(Phi, y):
    from sklearn.linear_model import lars_path

    icpt, keep = _lasso_design(Phi)
    Xk = Phi[:, keep]
    if icpt is not None:
        x_mean, y_mean = Xk.mean(axis=0), y.mean()
    else:
        x_mean, y_mean = np.zeros(Xk.shape[1]), 0.0
    Xc = Xk - x_mean
    yc = y - y_mean
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        alphas, _, coefs = lars_path(Xc, yc, method="lasso", max_iter=min(Xc.shape) * 4 + 100)
    return icpt, keep, x_mean, y_mean, Xc, yc, alphas, coefs


def _assemble(m, icpt, keep, x_mean, y_mean, coef, phi_const):
    beta = np.zeros(m)
    beta[keep] = coef
    if icpt is not None:
        beta[icpt] = (y_mean - x_mean @ coef) / phi_const
    return beta


def lasso_fit(Phi: np.ndarray, y: np.ndarray) -> LassoResult:
    """L1-penalised least squares with the penalty chosen by AIC on the LARS path.

    AIC = n log(RSS/n) + 2 df with df the number of active coefficients
    (plus the unpenalised intercept); path points with df >= n - 1 are
    excluded.
    """
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = Phi.shape
    icpt, keep, x_mean, y_mean, Xc, yc, alphas, coefs = _lars(Phi, y)
    if not np.isfinite(coefs).all():
        raise FitError(f"lasso path produced non-finite coefficients; alphas={alphas[:10].tolist()}...")
    rss = ((yc[:, None] - Xc @ coefs) ** 2).sum(axis=0)
    df = (coefs != 0).sum(axis=0) + (icpt is not None)
    aic = np.where(df < n - 1, n * np.log(np.maximum(rss, 1e-300) / n) + 2 * df, np.inf)
    if not np.isfinite(aic).any():
        raise FitError(f"no admissible lasso path point; alphas={alphas.tolist()}")
    best = int(np.argmin(aic))
    phi_const = Phi[0, icpt] if icpt is not None else 1.0
    beta = _assemble(m, icpt, keep, x_mean, y_mean, coefs[:, best], phi_const)
    return LassoResult(beta, float(alphas[best]), alphas, aic, int((coefs[:, best] != 0).sum()))


def lasso_at(Phi: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """Lasso coefficients at penalty ``alpha`` for (1/2n)||y - Phi b||^2 + alpha |b|_1.

    The path is piecewise linear in alpha, so interpolating between LARS
    breakpoints is exact.
    """
    Phi = np.asarray(Phi, dtype=float)
    icpt, keep, x_mean, y_mean, _, _, alphas, coefs = _lars(Phi, np.asarray(y, dtype=float))
    if alpha >= alphas[0]:
        coef = np.zeros(coefs.shape[0])
    elif alpha <= alphas[-1]:
        coef = coefs[:, -1]
    else:
        j = int(np.searchsorted(-alphas, -alpha))
        a_hi, a_lo = alphas[j - 1], alphas[j]
        w = (a_hi - alpha) / (a_hi - a_lo)
        coef = (1 - w) * coefs[:, j - 1] + w * coefs[:, j]
    phi_const = Phi[0, icpt] if icpt is not None else 1.0
    return _assemble(Phi.shape[1], icpt, keep, x_mean, y_mean, coef, phi_const)


# ---------------------------------------------------------------------------
# entry points


def _full_hermite(d, T, cfg):
    return FullHermite(d, T, cfg.delta, max_size=cfg.max_basis)


def fit_regress_later(train: TrainingSet, cfg: FitConfig, warm_start=None) -> ReplicatingMartingale:
    """Fit f on full paths; value through closed-form conditional expectations."""
    t0 = time.perf_counter()
    if cfg.family == "full_hermite":
        spec = _full_hermite(train.d, train.T, cfg)
        ols = ols_fit(spec.features(train.X), train.y, cfg.allow_underdetermined, cfg.ridge_jitter)
        model = ReplicatingMartingale(spec, ols.beta, dict(residual=ols.residual, jitter_active=ols.jitter_active))
    elif cfg.family == "lasso_full_poly":
        spec = _full_hermite(train.d, train.T, cfg)
        Phi = spec.features(train.X)
        res = lasso_fit(Phi, train.y)
        resid = float(np.linalg.norm(train.y - Phi @ res.beta) / np.sqrt(train.n))
        model = ReplicatingMartingale(spec, res.beta, dict(residual=resid, alpha=res.alpha, n_active=res.n_active))
    elif cfg.family == "poly_ldr":
        A0 = warm_start.spec.A if warm_start is not None else None
        model = fit_poly_ldr(train, cfg, A0)
    else:
        init = (warm_start.spec, warm_start.beta) if warm_start is not None else None
        spec, beta, diag = train_relu_net(train, cfg, init)
        model = ReplicatingMartingale(spec, beta, diag)
    model.diagnostics["seconds"] = time.perf_counter() - t0
    model.diagnostics["family"] = cfg.family
    return model


def fit_regress_now(train: TrainingSet, t: int, cfg: FitConfig) -> RegressNowModel:
    """Regress terminal values on features of the first ``t`` periods."""
    if not 0 <= t <= train.T:
        raise ValueError(f"t={t} outside [0, {train.T}]")
    t0 = time.perf_counter()
    v0 = float(np.mean(train.y))
    if t == 0:
        spec = FullHermite(train.d, 1, 1)
        beta = np.zeros(spec.n_features)
        beta[0] = v0
        return RegressNowModel(spec, beta, 0, v0, dict(residual=float(np.std(train.y))))
    Xt = train.prefix(t)
    sub = TrainingSet(Xt, train.y, train.d, t)
    if cfg.family == "relu_net":
        spec, beta, diag = train_relu_net(sub, cfg)
    elif cfg.family in ("full_hermite", "lasso_full_poly"):
        spec = _full_hermite(train.d, t, cfg)
        Phi = spec.features(Xt)
        if cfg.family == "lasso_full_poly":
            beta = lasso_fit(Phi, train.y).beta
        else:
            beta = ols_fit(Phi, train.y, cfg.allow_underdetermined, cfg.ridge_jitter).beta
        diag = dict(residual=float(np.linalg.norm(train.y - Phi @ beta) / np.sqrt(train.n)))
    else:
        model = fit_poly_ldr(sub, cfg)
        spec, beta, diag = model.spec, model.beta, model.diagnostics
    diag["seconds"] = time.perf_counter() - t0
    diag["family"] = cfg.family
    return RegressNowModel(spec, beta, t, v0, diag)


def fit(train: TrainingSet, cfg: FitConfig, t: int = 1, warm_start=None):
    if cfg.mode == "regress_later":
        return fit_regress_later(train, cfg, warm_start)
    return fit_regress_now(train, t, cfg)
