"""
Picking a hypothesis with a Scheffé tournament
==============================================

Each pair of candidates is compared on the set where one density exceeds
the other.  The winner is within a constant multiple of the best
candidate's TV distance, using only O(log |T| / delta^2) samples.
"""

import numpy as np

from artifact.identifiability import TournamentConfig, scheffe_select, tv_distance
from artifact.mixture import MixtureParams, sample

truth = MixtureParams([0.4, 0.6], [[-1.0], [1.5]], [1.0, 1.2])
rng = np.random.default_rng(3)
cands = [MixtureParams(truth.weights, truth.means + rng.normal(0, s, (2, 1)), truth.sigmas)
         for s in (0.02, 0.3, 0.6, 1.0, 1.5)]

cfg = TournamentConfig(cands, delta=0.05)
res = scheffe_select(cfg, sample(truth, cfg.sample_budget, seed=3), seed=3)
for i, c in enumerate(cands):
    mark = "<- selected" if i == res.index else ""
    print(f"candidate {i}: TV to truth {tv_distance(c, truth).value:.4f} {mark}")
print(f"samples used: {cfg.sample_budget}")
