"""Spherical Gaussian mixtures: data model, density evaluation and sampling.

Convention used everywhere in the package: a component with scale ``sigma``
has density

    g_{mu,sigma}(x) = sigma^{-d} exp(-pi ||x - mu||^2 / sigma^2),

so each coordinate has variance ``sigma**2 / (2*pi)``.  Helpers converting to
and from the usual standard-deviation parameterization are provided for
interoperability but are not used internally.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .seeding import substream

TWO_PI = 2.0 * math.pi
SQRT_2PI = math.sqrt(TWO_PI)

WEIGHT_TOL = 1e-12
WEIGHT_RENORM_TOL = 1e-9
SAMPLE_SHARD = 1 << 16


def sigma_to_std(sigma):
    """Per-coordinate standard deviation of a component with scale ``sigma``."""
    return np.asarray(sigma, dtype=float) / SQRT_2PI


def std_to_sigma(std):
    return np.asarray(std, dtype=float) * SQRT_2PI


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Component:
    w: float
    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        mu = _readonly(np.atleast_1d(self.mu))
        if mu.ndim != 1:
            raise ValueError("component mean must be a vector")
        if not np.all(np.isfinite(mu)):
            raise ValueError("component mean must be finite")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0 < self.w <= 1):
            raise ValueError(f"weight must lie in (0, 1], got {self.w}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class DerivedStats:
    w_min: float
    w_max: float
    sigma_min: float
    sigma_max: float
    rho: float
    rho_sigma: float
    rho_w: float

    def is_rho_bounded(self, rho: float) -> bool:
        return self.rho <= rho


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Immutable mixture ``sum_j w_j g_{mu_j, sigma_j}``.

    Weights within 1e-9 of summing to one are renormalized; anything further
    off is rejected.
    """

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        s = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        k = w.shape[0]
        if k < 1:
            raise ValueError("a mixture needs at least one component")
        if mu.ndim != 2 or mu.shape[0] != k or s.shape != (k,):
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, sigmas {s.shape}"
            )
        if mu.shape[1] < 1:
            raise ValueError("dimension must be positive")
        if not np.all(np.isfinite(mu)):
            raise ValueError("means must be finite")
        if not np.all((s > 0) & np.isfinite(s)):
            raise ValueError("sigmas must be positive and finite")
        if not np.all((w > 0) & (w <= 1)):
            raise ValueError("weights must lie in (0, 1]")
        total = float(np.sum(w))
        if abs(total - 1.0) > WEIGHT_RENORM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        if abs(total - 1.0) > 0:
            w = w / total
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "means", _readonly(mu))
        object.__setattr__(self, "sigmas", _readonly(s))

    @classmethod
    def from_components(cls, components: Iterable[Component]) -> "MixtureParams":
        comps = list(components)
        dims = {c.d for c in comps}
        if len(dims) != 1:
            raise ValueError("all components must share one dimension")
        return cls(
            weights=[c.w for c in comps],
            means=np.stack([c.mu for c in comps]),
            sigmas=[c.sigma for c in comps],
        )

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[Component]:
        return [Component(w, m, s) for w, m, s in zip(self.weights, self.means, self.sigmas)]

    def stats(self) -> DerivedStats:
        w, s = self.weights, self.sigmas
        rho = max(
            float(np.max(np.linalg.norm(self.means, axis=1))),
            float(np.max(s)),
            float(np.max(1.0 / s)),
        )
        return DerivedStats(
            w_min=float(w.min()),
            w_max=float(w.max()),
            sigma_min=float(s.min()),
            sigma_max=float(s.max()),
            rho=rho,
            rho_sigma=float(s.max() / s.min()),
            rho_w=float(w.max() / w.min()),
        )

    def translated(self, t) -> "MixtureParams":
        return MixtureParams(self.weights, self.means + np.asarray(t, dtype=float), self.sigmas)

    def permuted(self, perm: Sequence[int]) -> "MixtureParams":
        perm = list(perm)
        return MixtureParams(self.weights[perm], self.means[perm], self.sigmas[perm])

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "components": [
                {"w": float(w), "mu": [float(v) for v in m], "sigma": float(s)}
                for w, m, s in zip(self.weights, self.means, self.sigmas)
            ],
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixtureParams):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.sigmas, other.sigmas)
        )

    def __hash__(self):
        return hash((self.weights.tobytes(), self.means.tobytes(), self.sigmas.tobytes()))


def standard_mixture(means) -> MixtureParams:
    """Uniform weights and unit scales."""
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    k = means.shape[0]
    return MixtureParams(np.full(k, 1.0 / k), means, np.ones(k))


# --------------------------------------------------------------------------
# JSON format
# --------------------------------------------------------------------------

_TOP_FIELDS = {"d", "components"}
_COMPONENT_FIELDS = {"w", "mu", "sigma"}


def mixture_from_dict(obj: dict) -> MixtureParams:
    if not isinstance(obj, dict):
        raise ValueError("mixture document must be a JSON object")
    extra = set(obj) - _TOP_FIELDS
    missing = _TOP_FIELDS - set(obj)
    if extra:
        raise ValueError(f"unknown mixture fields: {sorted(extra)}")
    if missing:
        raise ValueError(f"missing mixture fields: {sorted(missing)}")
    d = obj["d"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ValueError("'d' must be a positive integer")
    comps = obj["components"]
    if not isinstance(comps, list) or not comps:
        raise ValueError("'components' must be a non-empty list")
    ws, mus, ss = [], [], []
    for i, c in enumerate(comps):
        if not isinstance(c, dict):
            raise ValueError(f"component {i} must be an object")
        extra = set(c) - _COMPONENT_FIELDS
        missing = _COMPONENT_FIELDS - set(c)
        if extra:
            raise ValueError(f"unknown fields in component {i}: {sorted(extra)}")
        if missing:
            raise ValueError(f"missing fields in component {i}: {sorted(missing)}")
        mu = c["mu"]
        if not isinstance(mu, list) or len(mu) != d:
            raise ValueError(f"component {i}: 'mu' must be a list of length {d}")
        ws.append(float(c["w"]))
        mus.append([float(v) for v in mu])
        ss.append(float(c["sigma"]))
    return MixtureParams(np.array(ws), np.array(mus).reshape(len(comps), d), np.array(ss))


def load_mixture(path) -> MixtureParams:
    with open(path, "r", encoding="utf-8") as fh:
        return mixture_from_dict(json.load(fh))


def save_mixture(mix: MixtureParams, path) -> None:
    Path(path).write_text(json.dumps(mix.to_dict(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Density and derivatives
# --------------------------------------------------------------------------

def _as_points(mix: MixtureParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != mix.d:
        raise ValueError(f"expected points of dimension {mix.d}, got shape {x.shape}")
    return x2, single


def component_densities(mix: MixtureParams, x) -> np.ndarray:
    """Unweighted g_j(x) for every point (rows) and component (columns)."""
    x2, _ = _as_points(mix, x)
    diff2 = ((x2[:, None, :] - mix.means[None, :, :]) ** 2).sum(axis=2)
    s = mix.sigmas[None, :]
    return s ** (-mix.d) * np.exp(-math.pi * diff2 / s**2)


def pdf_at(mix: MixtureParams, x):
    """Mixture density f(x); a scalar for one point, a vector for a stack."""
    x2, single = _as_points(mix, x)
    vals = component_densities(mix, x2) @ mix.weights
    return float(vals[0]) if single else vals


def grad_pdf_at(mix: MixtureParams, x):
    x2, single = _as_points(mix, x)
    g = component_densities(mix, x2)
    coef = g * (mix.weights / mix.sigmas**2)[None, :]
    diff = x2[:, None, :] - mix.means[None, :, :]
    grad = -TWO_PI * np.einsum("nj,njd->nd", coef, diff)
    return grad[0] if single else grad


def hess_pdf_at(mix: MixtureParams, x):
    x2, single = _as_points(mix, x)
    d = mix.d
    g = component_densities(mix, x2)
    coef = g * (mix.weights / mix.sigmas**2)[None, :]
    diff = (x2[:, None, :] - mix.means[None, :, :]) / mix.sigmas[None, :, None]
    outer = np.einsum("nj,nja,njb->nab", coef, diff, diff)
    eye = np.eye(d)[None, :, :] * coef.sum(axis=1)[:, None, None] / TWO_PI
    h = 4.0 * math.pi**2 * (outer - eye)
    h = 0.5 * (h + np.swapaxes(h, 1, 2))
    return h[0] if single else h


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleBatch:
    points: np.ndarray
    seed: int
    component_labels: np.ndarray | None = None
    streams: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be an N x d array")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def sample(mix: MixtureParams, n: int, seed: int, *, stream: str = "sample") -> SampleBatch:
    """Draw ``n`` i.i.d. points.

    Points are generated in fixed-size shards, each from its own substream,
    so a smaller request is always a prefix of a larger one with the same
    seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    n_shards = -(-n // SAMPLE_SHARD)
    pts, labels = [], []
    stds = sigma_to_std(mix.sigmas)
    for s in range(n_shards):
        rng = substream(seed, stream, s)
        lab = rng.choice(mix.k, size=SAMPLE_SHARD, p=mix.weights)
        z = rng.standard_normal((SAMPLE_SHARD, mix.d))
        pts.append(mix.means[lab] + stds[lab, None] * z)
        labels.append(lab)
    points = np.concatenate(pts)[:n]
    lab = np.concatenate(labels)[:n]
    names = tuple(f"{seed}:{stream}:{s}" for s in range(n_shards))
    return SampleBatch(points=points, seed=seed, component_labels=lab, streams=names)


def sample_component(mu, sigma: float, n: int, rng: np.random.Generator) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    return mu + (sigma / SQRT_2PI) * rng.standard_normal((n, mu.shape[0]))


# --------------------------------------------------------------------------
# Parameter distance
# --------------------------------------------------------------------------

def _pair_costs(G: MixtureParams, G2: MixtureParams) -> np.ndarray:
    if G.k != G2.k or G.d != G2.d:
        raise ValueError(f"mixtures differ in shape: (k={G.k}, d={G.d}) vs (k={G2.k}, d={G2.d})")
    w1, w2 = G.weights[:, None], G2.weights[None, :]
    s1, s2 = G.sigmas[:, None], G2.sigmas[None, :]
    smin = np.minimum(s1, s2)
    dmu = np.linalg.norm(G.means[:, None, :] - G2.means[None, :, :], axis=2)
    return np.abs(w1 - w2) / np.minimum(w1, w2) + dmu / smin + np.abs(s1 - s2) / smin


def param_distance(G: MixtureParams, G2: MixtureParams) -> tuple[float, tuple[int, ...]]:
    """Permutation-minimized parameter distance.

    Returns ``(value, perm)`` where component ``j`` of ``G`` is matched with
    component ``perm[j]`` of ``G2``.
    """
    cost = _pair_costs(G, G2)
    rows, cols = linear_sum_assignment(cost)
    perm = tuple(int(c) for c in cols[np.argsort(rows)])
    return float(cost[np.arange(G.k), list(perm)].sum()), perm


def match_means(estimated, truth) -> tuple[np.ndarray, np.ndarray]:
    """Match estimated means to true means minimizing total l2 distance.

    Returns ``(errors, perm)`` with ``errors[j] = ||estimated[j] - truth[perm[j]]||``.
    """
    a = np.atleast_2d(np.asarray(estimated, dtype=float))
    b = np.atleast_2d(np.asarray(truth, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    return cost[np.arange(len(a)), perm], perm


def param_distance_bruteforce(G: MixtureParams, G2: MixtureParams) -> tuple[float, tuple[int, ...]]:
    cost = _pair_costs(G, G2)
    if G.k > 8:
        raise ValueError("brute force is limited to k <= 8")
    best, best_perm = math.inf, None
    idx = np.arange(G.k)
    for perm in itertools.permutations(range(G.k)):
        v = float(cost[idx, list(perm)].sum())
        if v < best:
            best, best_perm = v, perm
    return best, tuple(best_perm)


# --------------------------------------------------------------------------
# Separation audit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PairSeparation:
    i: int
    j: int
    lhs: float
    rhs: float
    passed: bool
    regime: str  # "sqrt_log" when the sqrt(log(rho_sigma/w_min)) term binds, else "sqrt_d"


def separation_terms(stats: DerivedStats, d: int) -> tuple[float, float]:
    """The two candidates inside the min of the separation condition."""
    dim_term = math.sqrt(d) + math.sqrt(math.log(stats.rho_w * stats.rho_sigma))
    log_term = math.sqrt(math.log(stats.rho_sigma / stats.w_min))
    return dim_term, log_term


def separation_audit(mix: MixtureParams, c: float) -> list[PairSeparation]:
    if mix.k < 2:
        raise ValueError("separation needs at least two components")
    dim_term, log_term = separation_terms(mix.stats(), mix.d)
    scale = min(dim_term, log_term)
    regime = "sqrt_log" if log_term <= dim_term else "sqrt_d"
    out = []
    for i, j in itertools.combinations(range(mix.k), 2):
        lhs = float(np.linalg.norm(mix.means[i] - mix.means[j]))
        rhs = c * float(mix.sigmas[i] + mix.sigmas[j]) * scale
        out.append(PairSeparation(i, j, lhs, rhs, lhs >= rhs, regime))
    return out


def is_separated(mix: MixtureParams, c: float) -> bool:
    return mix.k < 2 or all(p.passed for p in separation_audit(mix, c))


# --------------------------------------------------------------------------
# Gaussian facts
# --------------------------------------------------------------------------

def tv_upper_bound_pinsker(p: Component, q: Component) -> float:
    """Upper bound on the L1 distance between two weighted components.

    KL-plus-Pinsker bound with ``q`` as the reference measure.  The log term
    enters through its absolute value, which keeps the bound valid (and
    real) when ``sigma_q < sigma_p``.
    """
    if p.d != q.d:
        raise ValueError("components differ in dimension")
    if p.sigma <= 0 or q.sigma <= 0:
        raise ValueError("sigmas must be positive")
    d = p.d
    s1, s2 = p.sigma, q.sigma
    dmu = float(np.linalg.norm(p.mu - q.mu))
    inner = (
        SQRT_2PI * dmu / s2
        + math.sqrt(d * abs(s1**2 - s2**2)) / s2
        + math.sqrt(2 * d * abs(math.log(s2 / s1)))
    )
    return abs(p.w - q.w) + min(p.w, q.w) * inner


@dataclass(frozen=True)
class NormTail:
    upper_threshold: float
    lower_threshold: float
    bound: float


def gaussian_norm_tail(d: int, t: float) -> NormTail:
    """Chi-square concentration for x with per-coordinate variance 1/(2 pi).

    ``Pr[||x||^2 >= upper_threshold] <= bound`` and
    ``Pr[||x||^2 <= lower_threshold] <= bound`` with ``bound = exp(-t)``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if d < 1:
        raise ValueError("d must be positive")
    root = 2.0 * math.sqrt(d * t)
    return NormTail(
        upper_threshold=(d + root + 2 * t) / TWO_PI,
        lower_threshold=(d - root) / TWO_PI,
        bound=math.exp(-t),
    )
