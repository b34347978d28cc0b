"""
Finding means from density peaks in low dimension
=================================================

A grid net is laid over the data's ball.  Points whose estimated density,
gradient and Hessian look like a peak are kept, clustered by single
linkage, and each cluster yields a mean, a width and a weight.
"""

import math

import numpy as np

from artifact.init_lowdim import InitConfig, NetConfig, initialize
from artifact.mixture import sample, standard_mixture

side = 6 * math.sqrt(2)
mix = standard_mixture(np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float) * side - side / 2)
stats = mix.stats()

# Exact oracle: densities come straight from the mixture.
cfg = InitConfig(NetConfig.from_stats(stats, 2, eps0=0.2, spacing=0.05, ball_radius=0.05))
rep = initialize(mix, 4, stats, cfg)
print("exact means:\n", np.round(rep.means, 3))
print("candidates per cluster:", rep.cluster_sizes)

# Sampled oracle: ball counts over a million draws.
cfg = InitConfig(NetConfig.from_stats(stats, 2, radius=side, eps0=0.2, spacing=0.05, ball_radius=0.3), kappa="gap")
rep = initialize(sample(mix, 1_000_000, seed=0), 4, stats, cfg)
print("sampled means:\n", np.round(rep.means, 3))
print("sigmas", np.round(rep.sigmas, 3), "weights", np.round(rep.weights, 3))
