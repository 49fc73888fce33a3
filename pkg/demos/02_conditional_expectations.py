"""
Closed-form conditional expectations
====================================

Each feature family comes with G_t(x_1..x_t) = E[phi(X) | X_1..X_t].
Here we compare the closed forms with brute-force inner simulation.
"""

# %%
import numpy as np

from repmart import features as feat
from repmart.features import FullHermite, PolyLDR, ReluNet

rng = np.random.default_rng(0)
d, T, t = 2, 4, 2
prefix = rng.standard_normal((1, t * d))
inner = rng.standard_normal((400_000, (T - t) * d))
x = np.hstack([np.repeat(prefix, inner.shape[0], 0), inner])

specs = {
    "full Hermite": FullHermite(d, T, 3),
    "polynomial LDR": PolyLDR(d, T, feat.random_stiefel(d * T, 2, rng), 3),
    "ReLU network": ReluNet(d, T, rng.standard_normal((d * T, 6)), rng.standard_normal(6), None),
}

# %%
for name, spec in specs.items():
    beta = rng.standard_normal(spec.n_features)
    closed = spec.conditional_expectation(prefix, t)[0] @ beta
    y = spec.features(x) @ beta
    se = y.std() / np.sqrt(y.size)
    print(f"{name:15s} closed {closed:+.5f}   inner MC {y.mean():+.5f} (z = {(y.mean() - closed) / se:+.2f})")

# %%
# The Hermite basis grows quickly with the number of driver coordinates.
for q in (15, 25, 120, 200):
    print(f"dT = {q:3d}: {feat.basis_size(q, 3):>9,} Hermite features of degree <= 3")

# %%
# Monomials of linear forms reduce to univariate normal moments.
terms = feat.kan_monomial_decomposition((1, 2))
y = np.array([0.7, -1.1])
print("y1*y2^2 =", y[0] * y[1] ** 2, " via powers of linear forms:", sum(c * (h @ y) ** k for c, h, k in terms))
