"""
Projecting a high-dimensional mixture onto k directions
=======================================================

With enough samples the top-k right singular vectors of the centered data
span the means up to a small error, so later stages can work in k dimensions.
"""

import numpy as np

from artifact.mixture import MixtureParams, sample
from artifact.pca import project, projection_errors, reduce

rng = np.random.default_rng(0)
k, d = 4, 64
u = rng.standard_normal((k, d))
means = 3.0 * u / np.linalg.norm(u, axis=1, keepdims=True)
mix = MixtureParams(np.full(k, 1 / k), means, rng.uniform(0.7, 1.3, k))

for n in (2_000, 20_000, 200_000):
    rep = reduce(sample(mix, n, seed=n), k)
    print(f"N = {n:>6}: max distance from mean to subspace {projection_errors(rep, means).max():.4f}")

print("leading singular values:", np.round(rep.singular_values[: k + 2], 3))
print("projected means:\n", np.round(project(rep, means), 3))
