"""Planted mixtures for experiments and tests."""

from __future__ import annotations

import numpy as np

from .mixture import MixtureParams, separation_terms, DerivedStats
from .seeding import substream


def _weights(k: int, scheme, rng) -> np.ndarray:
    if scheme == "uniform":
        return np.full(k, 1.0 / k)
    if isinstance(scheme, dict) and set(scheme) == {"dirichlet"}:
        alpha, w_floor = scheme["dirichlet"]
        for _ in range(10_000):
            w = rng.dirichlet(np.full(k, float(alpha)))
            if w.min() >= w_floor:
                return w
        raise ValueError(f"could not draw weights with w_min >= {w_floor}")
    if isinstance(scheme, (list, tuple)) and len(scheme) == k:
        w = np.asarray(scheme, dtype=float)
        return w / w.sum()
    raise ValueError(f"unknown weight scheme {scheme!r}")


def _sigmas(k: int, scheme, rng) -> np.ndarray:
    if scheme == "unit":
        return np.ones(k)
    if isinstance(scheme, dict) and set(scheme) == {"uniform"}:
        lo, hi = scheme["uniform"]
        if not 0 < lo <= hi:
            raise ValueError("sigma range must satisfy 0 < lo <= hi")
        return rng.uniform(lo, hi, k)
    if isinstance(scheme, (list, tuple)) and len(scheme) == k:
        return np.asarray(scheme, dtype=float)
    raise ValueError(f"unknown sigma scheme {scheme!r}")


def planted_mixture(k: int, d: int, c: float, seed: int, *, weights="uniform", sigmas="unit",
                    spread: float = 1.6, max_tries: int = 100_000) -> MixtureParams:
    """Random mixture whose means meet the separation condition with constant ``c``.

    Means are drawn by rejection in a cube, in units where the required
    distance between two components with the largest sigma is one, then
    scaled.  For a fixed seed the geometry is therefore the same for every
    ``c > 0``.
    """
    if k < 1 or d < 1:
        raise ValueError("k and d must be positive")
    if c < 0:
        raise ValueError("c must be non-negative")
    rng = substream(seed, "planted", "params")
    w = _weights(k, weights, rng)
    s = _sigmas(k, sigmas, rng)
    stats = DerivedStats(w.min(), w.max(), s.min(), s.max(), 1.0, s.max() / s.min(), w.max() / w.min())
    scale = min(separation_terms(stats, d))
    unit = max(c, 1e-12) * scale  # required distance per unit of sigma_i + sigma_j
    half = spread * max(k ** (1 / d), 1.0) / 2
    prng = substream(seed, "planted", "means")
    pts: list[np.ndarray] = []
    idx: list[int] = []
    tries = 0
    order = np.argsort(-s, kind="stable")  # place wide components first
    for j in order:
        while True:
            tries += 1
            if tries > max_tries:
                raise ValueError("rejection sampling of means failed; increase spread")
            p = prng.uniform(-half, half, d) * 2 * s.max()
            if all(np.linalg.norm(p - q) >= s[j] + s[i] for q, i in zip(pts, idx)):
                pts.append(p)
                idx.append(j)
                break
    means = np.empty((k, d))
    means[idx] = np.array(pts) * unit
    return MixtureParams(w, means, s)


def perturbed_means(mix: MixtureParams, offset: float, seed: int) -> np.ndarray:
    """Each mean moved by ``offset * sigma_j`` in a random direction."""
    rng = substream(seed, "planted", "perturb")
    u = rng.standard_normal(mix.means.shape)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return mix.means + offset * mix.sigmas[:, None] * u


def required_separation(mix: MixtureParams, c: float) -> float:
    """Smallest admissible distance between two components of the largest sigma."""
    return c * 2 * mix.sigmas.max() * min(separation_terms(mix.stats(), mix.d))

