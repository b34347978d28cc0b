"""Initializer for low dimensions: density peaks on a grid net.

Pipeline: grid net -> density/gradient/Hessian estimates at net points ->
approximate local maxima -> single-linkage clustering -> one mean per
cluster -> sigma from a density ratio -> weight from an in-ball fraction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate, special
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree

from .mixture import DerivedStats, MixtureParams, SampleBatch, grad_pdf_at, hess_pdf_at, pdf_at


class InitError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --------------------------------------------------------------------------
# Net
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NetConfig:
    radius: float
    spacing: float
    ball_radius: float
    eps0: float
    gamma: float = 0.0
    max_points: int = 10**8

    def __post_init__(self):
        if not (self.radius > 0 and self.spacing > 0 and self.ball_radius > 0 and self.eps0 > 0):
            raise ValueError("radius, spacing, ball radius and eps0 must be positive")

    @classmethod
    def from_stats(cls, stats: DerivedStats, d: int, c0: float = 2.0, **overrides) -> "NetConfig":
        """Defaults: eps0 = exp(-c0 d), spacing and gamma from the net argument."""
        eps0 = math.exp(-c0 * d)
        spacing = eps0 * math.sqrt(d) * stats.sigma_min**3 / (64 * stats.sigma_max**2)
        gamma = stats.w_min * stats.sigma_max ** (-(d + 4)) * eps0**3 * spacing**2 / 4
        params = dict(radius=2 * stats.rho, spacing=spacing, ball_radius=spacing, eps0=eps0, gamma=gamma)
        params.update(overrides)
        return cls(**params)


def net_size_estimate(cfg: NetConfig, d: int) -> float:
    return (2 * cfg.radius / cfg.spacing + 1) ** d


def build_net(cfg: NetConfig, d: int) -> np.ndarray:
    """Axis grid through the origin covering the ball of radius ``cfg.radius``.

    A grid point is kept when its cell (the cube of side ``spacing`` centred
    on it) meets the ball, so every point of the ball lies within
    ``sqrt(d)/2 * spacing`` of the net.
    """
    n_est = net_size_estimate(cfg, d)
    if n_est > cfg.max_points:
        need = 2 * cfg.radius / (cfg.max_points ** (1 / d) - 1)
        raise InitError(
            f"net of ~{n_est:.3g} points exceeds the guard of {cfg.max_points:.3g}; "
            f"use spacing >= {need:.3g}"
        )
    h = cfg.spacing
    m = int(math.floor(cfg.radius / h + 0.5 + 1e-9))
    axis = np.arange(-m, m + 1) * h
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    # distance from the origin to each cell
    gap = np.clip(np.abs(grid) - h / 2, 0.0, None)
    keep = np.sqrt((gap**2).sum(axis=1)) <= cfg.radius * (1 + 1e-12)
    return grid[keep]


# --------------------------------------------------------------------------
# Density and derivative estimates
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityEstimates:
    points: np.ndarray
    f: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    f_se: np.ndarray
    grad_se: np.ndarray
    hess_se: np.ndarray
    counts: np.ndarray | None = None

    def subset(self, idx) -> "DensityEstimates":
        c = None if self.counts is None else self.counts[idx]
        return DensityEstimates(self.points[idx], self.f[idx], self.grad[idx], self.hess[idx],
                                self.f_se[idx], self.grad_se[idx], self.hess_se[idx], c)


def ball_volume(d: int, r: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def exact_density_derivatives(mix: MixtureParams, points) -> DensityEstimates:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    zero = np.zeros(n)
    return DensityEstimates(pts, pdf_at(mix, pts), grad_pdf_at(mix, pts), hess_pdf_at(mix, pts),
                            zero, np.zeros((n, d)), np.zeros((n, d, d)))


def _tree(samples) -> tuple[cKDTree, int]:
    pts = samples.points if isinstance(samples, SampleBatch) else np.asarray(samples, dtype=float)
    return cKDTree(pts), pts.shape[0]


def estimate_density(samples, points, ball_radius: float, tree: cKDTree | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Histogram density: in-ball count fraction over the ball volume."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if tree is None:
        tree, n = _tree(samples)
    else:
        n = tree.n
    counts = np.asarray(tree.query_ball_point(pts, ball_radius, return_length=True), dtype=float)
    vol = ball_volume(pts.shape[1], ball_radius)
    p = counts / n
    return p / vol, np.sqrt(p * (1 - p) / n) / vol


def estimate_density_derivatives(samples, points, cfg: NetConfig, tree: cKDTree | None = None,
                                 chunk: int = 64) -> DensityEstimates:
    """f, grad f and Hess f at each point from in-ball sample moments.

    For the uniform ball of radius h in d dimensions, with c2 = h^2/(d+2)
    and c4 = h^4/((d+2)(d+4)), a second-order expansion of f gives

        m0 = f + (c2/2) tr H,   m1 = c2 grad f,
        S - c2 m0 I = c4 H + ((c4 - c2^2)/2) tr(H) I,

    where m0, m1, S are the in-ball zeroth, first and second moments of
    (y - x) divided by N * vol(ball).  These are inverted for f, grad f, H.
    """
    if cfg.ball_radius <= 0:
        raise ValueError("ball radius must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if tree is None:
        tree, n = _tree(samples)
    else:
        n = tree.n
    data = tree.data
    npts, d = pts.shape
    h = cfg.ball_radius
    vol = ball_volume(d, h)
    c2 = h**2 / (d + 2)
    c4 = h**4 / ((d + 2) * (d + 4))
    # Raw sums over in-ball samples of 1, u, u u^T and the squares needed
    # for standard errors, with u = y - x.
    counts = np.zeros(npts)
    s1 = np.zeros((npts, d))
    s11 = np.zeros((npts, d))
    s2 = np.zeros((npts, d * d))
    s22 = np.zeros((npts, d * d))
    for start in range(0, npts, chunk):
        block = pts[start:start + chunk]
        pairs = cKDTree(block).sparse_distance_matrix(tree, h, output_type="ndarray")
        if len(pairs) == 0:
            continue
        row = pairs["i"]
        u = data[pairs["j"]] - block[row]
        uu = (u[:, :, None] * u[:, None, :]).reshape(len(row), d * d)
        m = len(block)
        counts[start:start + m] = np.bincount(row, minlength=m)
        for a in range(d):
            s1[start:start + m, a] = np.bincount(row, u[:, a], minlength=m)
            s11[start:start + m, a] = np.bincount(row, u[:, a] ** 2, minlength=m)
        for a in range(d * d):
            s2[start:start + m, a] = np.bincount(row, uu[:, a], minlength=m)
            s22[start:start + m, a] = np.bincount(row, uu[:, a] ** 2, minlength=m)
    scale = 1.0 / (n * vol)
    m0 = counts * scale
    A = s2.reshape(npts, d, d) * scale - c2 * m0[:, None, None] * np.eye(d)
    trH = np.trace(A, axis1=1, axis2=2) / (c4 + d * (c4 - c2**2) / 2)
    H = (A - ((c4 - c2**2) / 2 * trH)[:, None, None] * np.eye(d)) / c4
    H = 0.5 * (H + H.transpose(0, 2, 1))
    f = m0 - c2 * trH / 2
    g = s1 * scale / c2
    q = counts / n
    empty = counts == 0
    f_se = np.where(empty, np.inf, np.sqrt(q * (1 - q) / n) / vol)
    g_se = np.sqrt(np.maximum(s11 / n - (s1 / n) ** 2, 0) / n) / vol / c2
    H_se = (np.sqrt(np.maximum(s22 / n - (s2 / n) ** 2, 0) / n) / vol / c4).reshape(npts, d, d)
    g_se[empty] = np.inf
    H_se[empty] = np.inf
    return DensityEstimates(pts, f, g, H, f_se, g_se, H_se, counts)


# --------------------------------------------------------------------------
# Approximate local maxima
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalMaxCandidate:
    point: np.ndarray
    f: float
    grad_norm: float
    h_max: float
    passes: tuple[bool, bool, bool]

    @property
    def accepted(self) -> bool:
        return all(self.passes)


def condition_thresholds(stats: DerivedStats, d: int, eps0: float) -> tuple[float, float, float]:
    """(density floor, gradient/density ceiling, Hessian/density ceiling)."""
    f_min = stats.w_min / (2 * stats.sigma_max**d)
    g_ratio = math.pi * eps0 * math.sqrt(d) * stats.sigma_min / (4 * stats.sigma_max**2)
    h_ratio = -math.pi / (2 * stats.sigma_max**2)
    return f_min, g_ratio, h_ratio


def approx_max_flags(est: DensityEstimates, stats: DerivedStats, eps0: float) -> np.ndarray:
    """Boolean (n, 3) array of the three conditions at every point."""
    d = est.points.shape[1]
    f_min, g_ratio, h_ratio = condition_thresholds(stats, d, eps0)
    gnorm = np.linalg.norm(est.grad, axis=1)
    hmax = np.linalg.eigvalsh(est.hess)[:, -1] if len(est.f) else np.zeros(0)
    return np.stack([est.f >= f_min, gnorm <= g_ratio * est.f, hmax <= h_ratio * est.f], axis=1)


def find_approx_maxima(est: DensityEstimates, stats: DerivedStats, eps0: float,
                       keep_all: bool = False) -> list[LocalMaxCandidate]:
    flags = approx_max_flags(est, stats, eps0)
    gnorm = np.linalg.norm(est.grad, axis=1)
    hmax = np.linalg.eigvalsh(est.hess)[:, -1] if len(est.f) else np.zeros(0)
    out = []
    for i in range(len(est.f)):
        c = LocalMaxCandidate(est.points[i], float(est.f[i]), float(gnorm[i]), float(hmax[i]),
                              tuple(bool(v) for v in flags[i]))
        if keep_all or c.accepted:
            out.append(c)
    return out


# --------------------------------------------------------------------------
# Clustering
# --------------------------------------------------------------------------

def single_linkage_cluster(points, k: int) -> list[np.ndarray]:
    """Single-linkage clusters, as index arrays into ``points``.

    Points are processed in lexicographic order and clusters are numbered by
    their lexicographically first member, so the result does not depend on
    input order.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    if n < k:
        raise InitError(f"only {n} candidate points for {k} clusters")
    if k < 1:
        raise ValueError("k must be positive")
    order = np.lexsort(pts.T[::-1])
    if n == 1:
        return [order.copy()]
    labels_sorted = fcluster(linkage(pts[order], method="single"), t=k, criterion="maxclust")
    seen: dict[int, list[int]] = {}
    for pos, lab in enumerate(labels_sorted):
        seen.setdefault(int(lab), []).append(int(order[pos]))
    clusters = [np.array(v) for v in seen.values()]
    if len(clusters) != k:
        raise InitError(f"single linkage produced {len(clusters)} clusters instead of {k}")
    return clusters


def cluster_diameter(points) -> float:
    pts = np.atleast_2d(points)
    if pts.shape[0] < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).max())


# --------------------------------------------------------------------------
# Scale and weight estimates
# --------------------------------------------------------------------------

DensityOracle = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class SigmaEstimate:
    sigma: float
    stderr: float
    kappa: float


def estimate_sigma(mu, density_oracle: DensityOracle, kappa: float) -> SigmaEstimate:
    """sigma = kappa sqrt(d) / sqrt(log(f(mu)/f(y))) with ||y - mu|| = kappa sqrt(d/pi).

    The log ratio is averaged over the two points y = mu +/- kappa sqrt(d/pi) e_1,
    which cancels the first-order effect of an offset between ``mu`` and the
    true mean.  ``density_oracle`` maps a stack of points to (values,
    standard errors).  Raises :class:`InitError` when the log ratio is not
    positive.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    d = mu.shape[0]
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    step = np.zeros(d)
    step[0] = kappa * math.sqrt(d / math.pi)
    vals, ses = density_oracle(np.stack([mu, mu + step, mu - step]))
    f0, fp, fm = (float(v) for v in vals)
    if not (f0 > 0 and fp > 0 and fm > 0):
        raise InitError(f"zero density estimate near mu at kappa={kappa:.4g}")
    L = 0.5 * (math.log(f0 / fp) + math.log(f0 / fm))
    if not L > 0:
        raise InitError(f"log density ratio not positive ({L:.4g}) at kappa={kappa:.4g}")
    sigma = kappa * math.sqrt(d) / math.sqrt(L)
    rel = math.sqrt((float(ses[0]) / f0) ** 2 + 0.25 * (float(ses[1]) / fp) ** 2 + 0.25 * (float(ses[2]) / fm) ** 2)
    return SigmaEstimate(sigma, 0.5 * sigma * rel / L, kappa)


def estimate_sigma_search(mu, density_oracle: DensityOracle, kappa: float, max_halvings: int = 12) -> SigmaEstimate:
    last = None
    for _ in range(max_halvings + 1):
        try:
            return estimate_sigma(mu, density_oracle, kappa)
        except InitError as exc:
            last = exc
            kappa /= 2
    raise InitError(f"sigma estimation failed after {max_halvings} halvings: {last}")


def c_d(d: int) -> float:
    """Mass of the sigma = 1 Gaussian in the ball of radius sqrt(d / (2 pi)).

    Computed by one-dimensional radial quadrature.
    """
    r0 = math.sqrt(d / (2 * math.pi))
    surface = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    val, _ = integrate.quad(lambda r: r ** (d - 1) * math.exp(-math.pi * r * r), 0.0, r0,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return surface * val


def estimate_weight(mu, sigma: float, samples) -> float:
    """In-ball fraction over c_d for the ball of radius sqrt(d) sigma / sqrt(2 pi)."""
    pts = samples.points if isinstance(samples, SampleBatch) else np.asarray(samples, dtype=float)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    d = mu.shape[0]
    r = math.sqrt(d) * sigma / math.sqrt(2 * math.pi)
    frac = float((((pts - mu) ** 2).sum(axis=1) <= r * r).mean())
    return frac / c_d(d)


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InitConfig:
    net: NetConfig
    kappa: float | str = "diameter"
    prefilter: float = 0.5
    separation_c: float = 1.0

    def __post_init__(self):
        if isinstance(self.kappa, str) and self.kappa not in ("diameter", "gap"):
            raise ValueError("kappa must be a positive number, 'diameter' or 'gap'")


@dataclass
class InitReport:
    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray
    cluster_sizes: list
    n_candidates: int
    n_net: int
    kappas: list = field(default_factory=list)
    sigma_stderr: list = field(default_factory=list)
    candidates: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
            "weights": self.weights.tolist(),
            "cluster_sizes": list(self.cluster_sizes),
            "n_candidates": self.n_candidates,
            "n_net": self.n_net,
            "kappas": list(self.kappas),
            "warnings": list(self.warnings),
        }


def _pick_kappa(rule, cluster_pts, other_pts, fallback: float) -> float:
    if not isinstance(rule, str):
        return float(rule)
    if rule == "diameter":
        diam = cluster_diameter(cluster_pts)
        if diam > 0:
            return diam / 8
        rule = "gap"
    if other_pts is None or len(other_pts) == 0:
        return fallback
    gap = np.sqrt(((cluster_pts[:, None, :] - other_pts[None, :, :]) ** 2).sum(axis=2)).min()
    return float(gap) / 8


def initialize(source, k: int, stats: DerivedStats, cfg: InitConfig) -> InitReport:
    """Means, scales and weights from samples (or, in exact mode, a mixture).

    ``stats`` supplies the bounds the procedure assumes known: w_min,
    sigma_min, sigma_max and rho.
    """
    exact = isinstance(source, MixtureParams)
    if exact:
        d = source.d
    else:
        if not isinstance(source, SampleBatch):
            source = np.atleast_2d(np.asarray(source, dtype=float))
        d = (source.points if isinstance(source, SampleBatch) else source).shape[1]
    net = build_net(cfg.net, d)
    f_min, _, _ = condition_thresholds(stats, d, cfg.net.eps0)
    if exact:
        est = exact_density_derivatives(source, net)
        tree = None

        def oracle(p):
            v = pdf_at(source, p)
            return v, np.zeros_like(v)
    else:
        tree, _ = _tree(source)
        f0, _ = estimate_density(source, net, cfg.net.ball_radius, tree)
        keep = np.flatnonzero(f0 >= cfg.prefilter * f_min)
        est = estimate_density_derivatives(source, net[keep], cfg.net, tree)

        def oracle(p):
            e = estimate_density_derivatives(source, p, cfg.net, tree)
            return e.f, e.f_se

    flags = approx_max_flags(est, stats, cfg.net.eps0)
    acc = np.flatnonzero(flags.all(axis=1))
    cand = est.points[acc]
    diag = {"n_net": len(net), "candidates": cand.tolist()}
    if len(cand) < k:
        raise InitError(f"found {len(cand)} approximate maxima, need {k}", diag)
    try:
        clusters = single_linkage_cluster(cand, k)
    except InitError as exc:
        raise InitError(str(exc), diag) from exc
    ratio = np.linalg.norm(est.grad[acc], axis=1) / est.f[acc]
    means, sig, sig_se, kap = [], [], [], []
    for c_idx, members in enumerate(clusters):
        best = members[np.argmin(ratio[members])]
        mu = cand[best]
        others = np.concatenate([cand[m] for i, m in enumerate(clusters) if i != c_idx]) if k > 1 else None
        kappa = _pick_kappa(cfg.kappa, cand[members], others, stats.sigma_min / 2)
        se = estimate_sigma_search(mu, oracle, kappa)
        means.append(mu)
        sig.append(se.sigma)
        sig_se.append(se.stderr)
        kap.append(se.kappa)
    means = np.array(means)
    sig = np.array(sig)
    if exact:
        weights = np.array([_exact_ball_mass(source, m, s) / c_d(d) for m, s in zip(means, sig)])
    else:
        weights = np.array([estimate_weight(m, s, source) for m, s in zip(means, sig)])
    order = np.lexsort(means.T[::-1])
    notes = _separation_warnings(means, sig, weights, cfg.separation_c)
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return InitReport(
        means=means[order], sigmas=sig[order], weights=weights[order],
        cluster_sizes=[len(clusters[i]) for i in order], n_candidates=len(cand), n_net=len(net),
        kappas=[kap[i] for i in order], sigma_stderr=[sig_se[i] for i in order], candidates=cand,
        warnings=notes,
    )


def _separation_warnings(means, sigmas, weights, c: float) -> list[str]:
    """Pairs of estimates closer than c (sqrt(d) + sqrt(log(rho_w rho_sigma))) (sigma_i + sigma_j)."""
    k, d = means.shape
    w = np.clip(weights, 1e-12, None)
    scale = math.sqrt(d) + math.sqrt(math.log(w.max() / w.min() * sigmas.max() / sigmas.min()))
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            gap = float(np.linalg.norm(means[i] - means[j]))
            need = c * scale * float(sigmas[i] + sigmas[j])
            if gap < need:
                out.append(f"estimates {i} and {j} are {gap:.3g} apart, below the separation {need:.3g}; "
                           "results may be out of tolerance")
    return out


def _exact_ball_mass(mix: MixtureParams, center, sigma_hat: float) -> float:
    """Mixture mass in the weight-estimation ball, via noncentral chi-square CDFs."""
    d = mix.d
    r = math.sqrt(d) * sigma_hat / math.sqrt(2 * math.pi)
    total = 0.0
    for w, m, s in zip(mix.weights, mix.means, mix.sigmas):
        std = s / math.sqrt(2 * math.pi)
        nc = float(((np.asarray(center) - m) ** 2).sum()) / std**2
        x = (r / std) ** 2
        total += w * (special.chdtr(d, x) if nc == 0 else _ncx2_cdf(x, d, nc))
    return total


def _ncx2_cdf(x: float, df: int, nc: float) -> float:
    from scipy.stats import ncx2

    return float(ncx2.cdf(x, df, nc))


# --------------------------------------------------------------------------
# Exact-mode diagnostics
# --------------------------------------------------------------------------

def soundness_violations(mix: MixtureParams, points, eps0: float, stats: DerivedStats | None = None) -> np.ndarray:
    """Accepted net points farther than eps0 sqrt(d) sigma_min from every mean."""
    stats = stats or mix.stats()
    est = exact_density_derivatives(mix, points)
    acc = approx_max_flags(est, stats, eps0).all(axis=1)
    dist = np.linalg.norm(est.points[:, None, :] - mix.means[None, :, :], axis=2).min(axis=1)
    bad = acc & (dist > eps0 * math.sqrt(mix.d) * stats.sigma_min)
    return est.points[bad]


def completeness_violations(mix: MixtureParams, points, eps0: float,
                            stats: DerivedStats | None = None) -> tuple[np.ndarray, int]:
    """Net points close enough to a mean that must be accepted but are not.

    Returns the violating points and the number of points checked.
    """
    stats = stats or mix.stats()
    d = mix.d
    eps_prime = eps0 * stats.sigma_min / (32 * stats.sigma_max)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dist = np.linalg.norm(pts[:, None, :] - mix.means[None, :, :], axis=2)
    radius = eps_prime * math.sqrt(d) / 32 * mix.sigmas**2 / stats.sigma_max
    near = (dist <= radius[None, :]).any(axis=1)
    est = exact_density_derivatives(mix, pts[near])
    acc = approx_max_flags(est, stats, eps0).all(axis=1)
    return est.points[~acc], int(near.sum())


def leakage_ratios(mix: MixtureParams, j: int, x, c0: float = 2.0, stats: DerivedStats | None = None) -> np.ndarray:
    """Left side over right side of the three leakage inequalities at ``x``.

    Values below one mean the inequality holds.
    """
    stats = stats or mix.stats()
    x = np.asarray(x, dtype=float)
    d = mix.d
    dens = mix.sigmas ** (-d) * np.exp(-math.pi * ((x - mix.means) ** 2).sum(axis=1) / mix.sigmas**2)
    wg = mix.weights * dens
    others = np.arange(mix.k) != j
    rel = np.linalg.norm(x - mix.means, axis=1) / mix.sigmas
    base = wg[j] * math.exp(-c0 * d)
    r = stats.sigma_min / stats.sigma_max
    return np.array([
        wg[others].sum() / (base * r**2),
        (wg[others] * rel[others]).sum() / (base * r**4),
        (wg[others] * rel[others] ** 2).sum() / (base * r**4),
    ])


def with_overrides(cfg: NetConfig, **kw) -> NetConfig:
    return replace(cfg, **kw)
