"""Newton refinement of mixture means over statistic-defined regions.

Given initializers ``z_j`` and known weights and scales, each component gets
a region ``S_j`` (slabs toward the other initializers intersected with a
ball).  The restricted first moments

    F_j(x) = 1/(w_j sigma_j) * sum_i w_i * int_{S_j} (y - z_j) g_{sigma_i x_i, sigma_i}(y) dy

in the normalized variables ``x_i = mu_i / sigma_i`` are matched against
their empirical counterparts ``b_j`` by Newton's method.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .mixture import (
    SQRT_2PI,
    TWO_PI,
    DerivedStats,
    MixtureParams,
    SampleBatch,
    gaussian_norm_tail,
    separation_audit,
    sigma_to_std,
)
from .numerics import (
    SolveConfig,
    SolveError,
    SolveReport,
    SystemOracle,
    inf_operator_norm,
    newton_solve,
)
from .seeding import substream

log = logging.getLogger(__name__)

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-12
# Components whose ball of mass 1 - exp(-PRUNE_T) misses a region are skipped.
PRUNE_T = 60.0


# --------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Region:
    anchor: np.ndarray
    directions: np.ndarray
    slab_halfwidth: float
    ball_radius: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.anchor, dtype=float))
        dirs = np.asarray(self.directions, dtype=float).reshape(-1, a.shape[0])
        if dirs.shape[0] and not np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("slab directions must be unit vectors")
        if not (self.slab_halfwidth > 0 and self.ball_radius > 0):
            raise ValueError("slab half-width and ball radius must be positive")
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "directions", dirs)

    @property
    def d(self) -> int:
        return self.anchor.shape[0]

    def contains(self, y) -> np.ndarray | bool:
        """Inclusive membership test for one point or a stack of points."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        u = y.reshape(-1, self.d) - self.anchor
        inside = (u * u).sum(axis=1) <= self.ball_radius**2
        if self.directions.shape[0]:
            proj = np.abs(u @ self.directions.T)
            inside &= (proj <= self.slab_halfwidth).all(axis=1)
        return bool(inside[0]) if single else inside

    def interval(self) -> tuple[float, float]:
        """The region as an interval; only meaningful in one dimension."""
        if self.d != 1:
            raise ValueError("interval form exists only for d = 1")
        r = min(self.slab_halfwidth, self.ball_radius)
        z = float(self.anchor[0])
        return z - r, z + r


def region_contains(r: Region, y) -> bool:
    return r.contains(np.asarray(y, dtype=float))


@dataclass(frozen=True, eq=False)
class Known:
    """Weights and scales treated as known during refinement."""

    weights: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        s = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if w.shape != s.shape:
            raise ValueError("weights and sigmas must have the same length")
        if np.any(w <= 0) or np.any(s <= 0):
            raise ValueError("weights and sigmas must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigmas", s)

    @classmethod
    def of(cls, mix: MixtureParams) -> "Known":
        return cls(mix.weights, mix.sigmas)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def stats(self, means=None) -> DerivedStats:
        w, s = self.weights, self.sigmas
        rho = max(float(s.max()), float((1 / s).max()))
        if means is not None:
            rho = max(rho, float(np.linalg.norm(np.atleast_2d(means), axis=1).max()))
        return DerivedStats(
            w_min=float(w.min()),
            w_max=float(w.max()),
            sigma_min=float(s.min()),
            sigma_max=float(s.max()),
            rho=rho,
            rho_sigma=float(s.max() / s.min()),
            rho_w=float(w.max() / w.min()),
        )


def region_sizes(sigma: float, d: int, stats: DerivedStats) -> tuple[float, float]:
    halfwidth = 4.0 * math.sqrt(math.log(stats.rho_sigma / stats.w_min)) * sigma
    radius = 4.0 * (math.sqrt(d) + math.sqrt(math.log(stats.rho_sigma * stats.rho_w))) * sigma
    return halfwidth, radius


def build_regions(initializers, known: Known, stats: DerivedStats | None = None) -> list[Region]:
    z = np.atleast_2d(np.asarray(initializers, dtype=float))
    k, d = z.shape
    if k < 1:
        raise ValueError("need at least one initializer")
    if known.k != k:
        raise ValueError(f"{k} initializers but {known.k} known components")
    stats = stats or known.stats(z)
    regions = []
    for j in range(k):
        others = [l for l in range(k) if l != j]
        diffs = z[others] - z[j]
        norms = np.linalg.norm(diffs, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"initializer {j} coincides with another initializer")
        dirs = diffs / norms[:, None]
        halfwidth, radius = region_sizes(float(known.sigmas[j]), d, stats)
        if k == 1:
            halfwidth = math.inf
        regions.append(Region(z[j], dirs, halfwidth, radius))
    return regions


# --------------------------------------------------------------------------
# Estimates
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Estimate:
    """A vector or matrix estimate with per-entry standard errors.

    ``eta`` is the reported accuracy in the infinity norm (vectors) or the
    induced infinity norm (matrices).
    """

    value: np.ndarray
    stderr: np.ndarray
    eta: float
    flagged: tuple[int, ...] = ()


def _eta_vec(se: np.ndarray, z: float = 3.0) -> float:
    return float(z * np.max(se)) if se.size else 0.0


def _eta_mat(se: np.ndarray, z: float = 3.0) -> float:
    return z * inf_operator_norm(se)


def estimate_b(samples: SampleBatch, regions: Sequence[Region], known: Known, *, z: float = 3.0) -> Estimate:
    """Empirical restricted means, scaled by 1/(w_j sigma_j).

    Regions without any sample are flagged; their entries are zero with an
    infinite tolerance.
    """
    y = samples.points
    n = y.shape[0]
    k, d = len(regions), regions[0].d
    val = np.zeros((k, d))
    se = np.zeros((k, d))
    flagged = []
    for j, r in enumerate(regions):
        mask = r.contains(y)
        scale = 1.0 / (known.weights[j] * known.sigmas[j])
        if not mask.any():
            flagged.append(j)
            se[j] = np.inf
            continue
        u = np.where(mask[:, None], y - r.anchor, 0.0)
        val[j] = scale * u.mean(axis=0)
        se[j] = scale * u.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.inf
    eta = math.inf if flagged else _eta_vec(se, z)
    return Estimate(val.ravel(), se.ravel(), eta, tuple(flagged))


def b_tolerance_lemma(n: int, stats: DerivedStats, d: int, k: int, gamma: float = 0.01, C: float = 1.0) -> float:
    """Accuracy implied by N >= C rho^3 log(dk/gamma) / (eta^2 w_min), solved for eta."""
    return math.sqrt(C * stats.rho**3 * math.log(d * k / gamma) / (n * stats.w_min))


def exact_b(mix: MixtureParams, regions: Sequence[Region]) -> Estimate:
    """Population value of b for a one-dimensional mixture, by quadrature."""
    x_star = (mix.means / mix.sigmas[:, None]).ravel()
    return eval_F(x_star, regions, Known.of(mix), method="quadrature")


def _far(m: np.ndarray, std: float, r: Region) -> bool:
    tail = gaussian_norm_tail(r.d, PRUNE_T)
    reach = std * math.sqrt(tail.upper_threshold * TWO_PI)
    return float(np.linalg.norm(m - r.anchor)) - r.ball_radius > reach


def _moments_1d(a: float, b: float, z: float, m: float, sigma: float) -> tuple[float, float, float, float, float]:
    """Integrals over [a, b] of p(y) g_{m,sigma}(y) for p in (1, y-z, (y-z)(y-m), ...).

    Returns (I1, I2, I3, err) where
      I1 = int (y - z) g,  I2 = int (y - z)(y - m) g,
      I3 = int (y - z) [2 pi (y - m)^2 / sigma^2 - 1] g.
    """
    def g(y):
        return math.exp(-math.pi * (y - m) ** 2 / sigma**2) / sigma

    funcs = (
        lambda y: (y - z) * g(y),
        lambda y: (y - z) * (y - m) * g(y),
        lambda y: (y - z) * (TWO_PI * (y - m) ** 2 / sigma**2 - 1.0) * g(y),
    )
    out, err = [], 0.0
    for f in funcs:
        total = 0.0
        pieces = [(a, b)]
        if a < m < b:
            pieces = [(a, m), (m, b)]
        for lo, hi in pieces:
            v, e = integrate.quad(f, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
            total += v
            err += e
        out.append(total)
    return out[0], out[1], out[2], err


class _Quad1D:
    """Cache of the one-dimensional integrals needed at one point x."""

    def __init__(self, x, regions, known):
        self.k = len(regions)
        self.I1 = np.zeros((self.k, self.k))
        self.I2 = np.zeros((self.k, self.k))
        self.I3 = np.zeros((self.k, self.k))
        self.err = np.zeros((self.k, self.k))
        x = np.asarray(x, dtype=float).ravel()
        for j, r in enumerate(regions):
            a, b = r.interval()
            z = float(r.anchor[0])
            for i in range(self.k):
                s = float(known.sigmas[i])
                m = s * x[i]
                if _far(np.array([m]), float(sigma_to_std(s)), r):
                    continue
                self.I1[j, i], self.I2[j, i], self.I3[j, i], self.err[j, i] = _moments_1d(a, b, z, m, s)


def _check_x(x, regions, known) -> np.ndarray:
    k, d = len(regions), regions[0].d
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != k * d or known.k != k:
        raise ValueError(f"expected a vector of length {k * d}")
    return x


def _mc_system(x, regions, known, n, seed, stream, z, control_variate, want_F=True, want_J=True):
    """Monte Carlo F and F' from one fresh draw of ``n`` points per component."""
    k, d = len(regions), regions[0].d
    w, s = known.weights, known.sigmas
    xs = x.reshape(k, d)
    Fv = np.zeros((k, d))
    Fvar = np.zeros((k, d))
    Ffloor = np.zeros((k, d))
    J = np.zeros((k * d, k * d))
    Jse = np.zeros((k * d, k * d))
    eye = np.eye(d)
    for i in range(k):
        m = s[i] * xs[i]
        std = float(sigma_to_std(s[i]))
        ys = None
        for j, r in enumerate(regions):
            if _far(m, std, r):
                continue
            if ys is None:
                ys = m + std * substream(seed, *stream, i).standard_normal((n, d))
            mask = r.contains(ys)
            # Complement form: full-space moments are known exactly, so only
            # the (rare) points outside the region are averaged.
            outside = control_variate and mask.sum() * 2 > n
            sel = ys[~mask] if outside else ys[mask]
            sign = -1.0 if outside else 1.0
            u = sel - r.anchor
            cf = w[i] / (w[j] * s[j])
            if want_F:
                mean = u.sum(axis=0) / n
                second = (u * u).sum(axis=0) / n
                base = (m - r.anchor) if outside else 0.0
                Fv[j] += cf * (base + sign * mean)
                Fvar[j] += cf**2 * np.maximum(second - mean**2, 0.0) / (n - 1)
                Ffloor[j] += cf * min(r.ball_radius, r.slab_halfwidth) / n
            if want_J:
                v = sel - m
                cj = TWO_PI * cf / s[i]
                mean = u.T @ v / n
                second = (u * u).T @ (v * v) / n
                base = (std**2) * eye if outside else 0.0
                blk = slice(j * d, (j + 1) * d), slice(i * d, (i + 1) * d)
                J[blk] = cj * (base + sign * mean)
                res = cj * np.sqrt(np.maximum(second - mean**2, 0.0) / (n - 1))
                res_floor = cj * r.ball_radius * (r.ball_radius + float(np.linalg.norm(r.anchor - m))) / n
                Jse[blk] = np.maximum(res, res_floor)
    Fse = np.maximum(np.sqrt(Fvar), Ffloor)
    F_est = Estimate(Fv.ravel(), Fse.ravel(), _eta_vec(Fse, z)) if want_F else None
    J_est = Estimate(J, Jse, _eta_mat(Jse, z)) if want_J else None
    return F_est, J_est


def eval_F(x, regions: Sequence[Region], known: Known, *, method: str = "mc", n: int = 100_000,
           seed: int = 0, stream: Sequence = ("F",), z: float = 3.0, control_variate: bool = True) -> Estimate:
    """Evaluate F at normalized means ``x`` (length k*d, component-major).

    ``method="quadrature"`` integrates exactly in one dimension;
    ``method="mc"`` draws ``n`` fresh points from each component
    ``(sigma_i x_i, sigma_i)`` using the substream ``seed:stream:i``.  With
    ``control_variate`` the restricted average is rewritten through the
    exactly known full-space mean whenever most draws fall in the region;
    otherwise the plain restricted average is used.
    """
    x = _check_x(x, regions, known)
    if method == "quadrature":
        w, s = known.weights, known.sigmas
        q = _Quad1D(x, regions, known)
        coef = w[None, :] / (w[:, None] * s[:, None])
        val = (coef * q.I1).sum(axis=1)
        se = (coef * q.err).sum(axis=1)
        return Estimate(val, se, float(np.max(se)))
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    return _mc_system(x, regions, known, n, seed, stream, z, control_variate, want_J=False)[0]


def eval_Fprime(x, regions: Sequence[Region], known: Known, *, method: str = "mc", n: int = 100_000,
                seed: int = 0, stream: Sequence = ("J",), z: float = 3.0, control_variate: bool = True) -> Estimate:
    """Jacobian of F in k x k blocks of d x d; block (j, i) is dF_j / dx_i."""
    x = _check_x(x, regions, known)
    if method == "quadrature":
        w, s = known.weights, known.sigmas
        q = _Quad1D(x, regions, known)
        coef = TWO_PI * w[None, :] / (w[:, None] * s[:, None] * s[None, :])
        se = coef * q.err
        return Estimate(coef * q.I2, se, inf_operator_norm(se))
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    return _mc_system(x, regions, known, n, seed, stream, z, control_variate, want_F=False)[1]


def eval_system(x, regions: Sequence[Region], known: Known, *, method: str = "mc", n: int = 100_000,
                seed: int = 0, stream: Sequence = ("system",), z: float = 3.0,
                control_variate: bool = True) -> tuple[Estimate, Estimate]:
    """F and F' at the same point; the Monte Carlo path shares one draw."""
    x = _check_x(x, regions, known)
    if method == "quadrature":
        return (eval_F(x, regions, known, method=method),
                eval_Fprime(x, regions, known, method=method))
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    return _mc_system(x, regions, known, n, seed, stream, z, control_variate)


def eval_Fsecond_1d(x, regions: Sequence[Region], known: Known) -> np.ndarray:
    """Second derivatives d^2 F_j / dx_i^2 by quadrature (d = 1).

    Mixed partials vanish because F_j is a sum of single-component terms.
    """
    x = _check_x(x, regions, known)
    if regions[0].d != 1:
        raise ValueError("quadrature second derivatives are implemented for d = 1")
    w, s = known.weights, known.sigmas
    q = _Quad1D(x, regions, known)
    coef = TWO_PI * w[None, :] / (w[:, None] * s[:, None])
    return coef * q.I3


def lipschitz_estimate_1d(points, regions: Sequence[Region], known: Known) -> float:
    """max over points of the bilinear infinity norm of F'' (d = 1)."""
    best = 0.0
    for p in points:
        H = eval_Fsecond_1d(p, regions, known)
        best = max(best, float(np.abs(H).sum(axis=1).max()))
    return best


# --------------------------------------------------------------------------
# Refinement driver
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineConfig:
    delta: float
    n_jacobian: int = 100_000
    iterations: int | None = None
    exact_quadrature: bool = False
    seed: int = 0
    c0: float = 1.0
    C: float = 4.0
    separation_c: float = 4.0
    z: float = 3.0
    control_variate: bool = True

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.n_jacobian < 2:
            raise ValueError("sample counts must be at least 2")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be at least 1")


def default_iterations(d: int, delta: float, C: float = 4.0) -> int:
    ratio = d / delta
    if ratio <= math.e:
        return 1
    return max(1, math.ceil(C * math.log(math.log(ratio))))


def initializer_radius(d: int, k: int, c0: float = 1.0) -> float:
    """eps0 = c0 * min(d, k)^(-5/2), in units of sigma."""
    return c0 * min(d, k) ** -2.5


def eta_target(delta: float, d: int, stats: DerivedStats, c_prime: float = 1.0) -> float:
    return delta * stats.w_min / (c_prime * math.sqrt(d) * stats.rho_sigma)


def jacobian_bound_B(stats: DerivedStats) -> float:
    return 4.0 * stats.rho_sigma / stats.w_min


@dataclass
class RefineResult:
    means: np.ndarray
    report: SolveReport
    regions: list
    b: Estimate
    eps0: float
    iterations: int
    delta_prime: float
    sigmas: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def trajectory(self) -> list[np.ndarray]:
        """Means (k x d) at x0 and after every iteration."""
        k, d = self.means.shape
        return [np.asarray(x).reshape(k, d) * self.sigmas[:, None] for x in [self.report.x0, *self.report.iterates]]


class RefineError(RuntimeError):
    def __init__(self, message: str, result: RefineResult | None = None):
        super().__init__(message)
        self.result = result


def refine(source, initializers, known: Known, cfg: RefineConfig) -> RefineResult:
    """Amplify coarse mean estimates to accuracy ``cfg.delta`` (in units of sigma).

    ``source`` is a :class:`SampleBatch` (b estimated from samples) or, for
    the noiseless one-dimensional path, the true :class:`MixtureParams`.
    """
    z0 = np.atleast_2d(np.asarray(initializers, dtype=float))
    k, d = z0.shape
    notes: list[str] = []
    if k >= 2:
        audit = separation_audit(MixtureParams(known.weights / known.weights.sum(), z0, known.sigmas), cfg.separation_c)
        if not all(p.passed for p in audit):
            msg = f"initializers fail the separation gate c={cfg.separation_c}"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
    stats = known.stats(z0)
    regions = build_regions(z0, known, stats)
    eps0 = initializer_radius(d, k, cfg.c0)
    T = cfg.iterations or default_iterations(d, cfg.delta, cfg.C)
    delta_prime = cfg.delta / math.sqrt(d)
    x0 = (z0 / known.sigmas[:, None]).ravel()
    method = "quadrature" if cfg.exact_quadrature else "mc"
    if cfg.exact_quadrature and d != 1:
        raise ValueError("exact quadrature is available only for d = 1")

    if isinstance(source, MixtureParams):
        if not cfg.exact_quadrature:
            raise ValueError("a MixtureParams source requires exact_quadrature")
        b = exact_b(source, regions)
    else:
        b = estimate_b(source, regions, known, z=cfg.z)
        if b.flagged:
            raise RefineError(f"regions without samples: {list(b.flagged)}")

    if cfg.delta >= eps0:
        rep = SolveReport(x0=x0.copy(), eta1=b.eta, converged=True, status="skipped",
                          message="delta >= eps0; initializers returned unchanged")
        return RefineResult(z0.copy(), rep, regions, b, eps0, 0, delta_prime, known.sigmas, notes)

    cache: dict = {}

    def system(x, t):
        key = (t, x.tobytes())
        if key not in cache:
            cache.clear()
            cache[key] = eval_system(x, regions, known, method=method, n=cfg.n_jacobian, seed=cfg.seed,
                                     stream=("refine", t), z=cfg.z, control_variate=cfg.control_variate)
        return cache[key]

    def F(x, t):
        e = system(x, t)[0]
        return e.value, e.eta

    def J(x, t):
        e = system(x, t)[1]
        return e.value, e.eta

    oracle = SystemOracle(F, J, b.value, eta1=b.eta)
    solve_cfg = SolveConfig(max_iterations=T, stop_tolerance=delta_prime, neighborhood_radius=eps0)
    try:
        rep = newton_solve(oracle, x0, solve_cfg)
    except SolveError as exc:
        res = RefineResult(z0.copy(), exc.report, regions, b, eps0, T, delta_prime, known.sigmas, notes)
        raise RefineError(str(exc), res) from exc
    means = rep.x.reshape(k, d) * known.sigmas[:, None]
    return RefineResult(means, rep, regions, b, eps0, T, delta_prime, known.sigmas, notes)


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LeakageEntry:
    j: int
    own_mass: float
    own_stderr: float
    cross_mass: float
    cross_stderr: float
    own_threshold: float
    cross_threshold: float

    def passes(self, z: float = 3.0) -> bool:
        return (self.own_mass - z * self.own_stderr >= self.own_threshold
                and self.cross_mass + z * self.cross_stderr < self.cross_threshold)


def _interval_mass(a: float, b: float, m: float, sigma: float) -> float:
    std = float(sigma_to_std(sigma))
    lo, hi = (a - m) / std, (b - m) / std
    if lo > 0:
        return float(special.ndtr(-lo) - special.ndtr(-hi))
    return float(special.ndtr(hi) - special.ndtr(lo))


def leakage_report(mix: MixtureParams, regions: Sequence[Region], *, n: int = 200_000, seed: int = 0) -> list[LeakageEntry]:
    """Own-component and cross-component masses inside each region.

    Exact interval masses in one dimension, Monte Carlo otherwise.  For
    cross masses with no hits the standard error is the one-hit resolution
    ``w_i / n`` so the comparison stays conservative.
    """
    d = mix.d
    out = []
    for j, r in enumerate(regions):
        own_t = 1.0 - 1.0 / (8 * math.pi * d)
        cross_t = mix.weights[j] / (16 * math.pi * d)
        if d == 1:
            a, b = r.interval()
            own = _interval_mass(a, b, mix.means[j, 0], mix.sigmas[j])
            cross = sum(mix.weights[i] * _interval_mass(a, b, mix.means[i, 0], mix.sigmas[i])
                        for i in range(mix.k) if i != j)
            out.append(LeakageEntry(j, own, 0.0, float(cross), 0.0, own_t, float(cross_t)))
            continue
        own_se = cross_var = 0.0
        cross = 0.0
        own = 0.0
        for i in range(mix.k):
            std = float(sigma_to_std(mix.sigmas[i]))
            if i != j and _far(mix.means[i], std, r):
                cross_var += (mix.weights[i] / n) ** 2
                continue
            ys = mix.means[i] + std * substream(seed, "leakage", j, i).standard_normal((n, d))
            p = float(r.contains(ys).mean())
            se = max(math.sqrt(p * (1 - p) / n), 1.0 / n)
            if i == j:
                own, own_se = p, se
            else:
                cross += mix.weights[i] * p
                cross_var += (mix.weights[i] * se) ** 2
        out.append(LeakageEntry(j, own, own_se, cross, math.sqrt(cross_var), own_t, float(cross_t)))
    return out


@dataclass(frozen=True)
class BlockDiagnostics:
    offdiag_row_mass: float
    diag_deviation: float
    varah_margin: float


def jacobian_block_diagnostics(J, k: int, d: int) -> BlockDiagnostics:
    """Largest off-diagonal block row mass and diagonal-block deviation from I."""
    J = np.asarray(J, dtype=float)
    off = 0.0
    dev = 0.0
    for j in range(k):
        rows = slice(j * d, (j + 1) * d)
        row_abs = np.abs(J[rows]).copy()
        row_abs[:, rows] = 0.0
        off = max(off, float(row_abs.sum(axis=1).max()))
        dev = max(dev, inf_operator_norm(J[rows, rows] - np.eye(d)))
    diag = np.diag(J)
    margin = float(np.min(diag - (np.abs(J).sum(axis=1) - np.abs(diag))))
    return BlockDiagnostics(off, dev, margin)
