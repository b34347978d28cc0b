"""Mean moments, injective norms, mixture distances, Scheffé selection and
the moment-collision search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .mixture import (
    MixtureParams,
    SampleBatch,
    param_distance,
    pdf_at,
    sample,
    standard_mixture,
)
from .seeding import substream

# Annotation constants for the collision report.
COLLISION_C0 = 8 * math.pi * math.e
COLLISION_C1 = 36.0


# --------------------------------------------------------------------------
# Mean moments
# --------------------------------------------------------------------------

def multisets(d: int, r: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations_with_replacement(range(d), r))


def multiplicity(alpha: tuple[int, ...]) -> int:
    """Number of ordered index tuples equal to ``alpha`` as a multiset."""
    out = math.factorial(len(alpha))
    for _, grp in itertools.groupby(alpha):
        out //= math.factorial(len(list(grp)))
    return out


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Symmetric tensors M_1..M_R, each stored on sorted index tuples."""

    d: int
    tensors: tuple

    @property
    def R(self) -> int:
        return len(self.tensors)

    def dims(self) -> list[int]:
        return [len(t) for t in self.tensors]

    def to_dense(self, r: int) -> np.ndarray:
        if not 1 <= r <= self.R:
            raise ValueError(f"order must lie in [1, {self.R}]")
        out = np.zeros((self.d,) * r)
        for alpha, v in zip(multisets(self.d, r), self.tensors[r - 1]):
            for perm in set(itertools.permutations(alpha)):
                out[perm] = v
        return out

    def __sub__(self, other: "MomentVector") -> "MomentVector":
        if self.d != other.d or self.R != other.R:
            raise ValueError("moment vectors differ in shape")
        return MomentVector(self.d, tuple(a - b for a, b in zip(self.tensors, other.tensors)))


def mean_moments(means, R: int) -> MomentVector:
    """M_r = (1/k) sum_j mu_j^{(x) r} for r = 1..R.

    Per-entry terms are sorted before summation so the result does not
    depend on the order of the means.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    mu = np.asarray(means, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    k, d = mu.shape
    tensors = []
    for r in range(1, R + 1):
        idx = np.array(multisets(d, r))
        terms = np.prod(mu[:, idx], axis=2)  # (k, D_r)
        tensors.append(np.sort(terms, axis=0).sum(axis=0) / k)
    return MomentVector(d, tuple(tensors))


# --------------------------------------------------------------------------
# Injective norm
# --------------------------------------------------------------------------

def _contract(T: np.ndarray, y: np.ndarray, times: int) -> np.ndarray:
    out = T
    for _ in range(times):
        out = out @ y
    return out


def tensor_form(T: np.ndarray, y) -> float:
    """<T, y^{(x) r}>."""
    return float(_contract(np.asarray(T, dtype=float), np.asarray(y, dtype=float), np.ndim(T)))


@dataclass(frozen=True)
class InjectiveNorm:
    value: float
    argmax: np.ndarray
    certified_lower_bound: bool = True


def _sshopm(T: np.ndarray, y0: np.ndarray, alpha: float, iters: int, tol: float) -> tuple[float, np.ndarray]:
    r = T.ndim
    y = y0 / np.linalg.norm(y0)
    val = tensor_form(T, y)
    for _ in range(iters):
        z = _contract(T, y, r - 1) + alpha * y
        nz = np.linalg.norm(z)
        if nz == 0:
            break
        y = z / nz
        new = tensor_form(T, y)
        if abs(new - val) <= tol * max(1.0, abs(new)):
            val = new
            break
        val = new
    return val, y


def _sphere_refine(T: np.ndarray, d: int) -> tuple[float, np.ndarray]:
    """Grid search plus local polish over the sphere for d = 2 or 3."""
    absval = lambda y: abs(tensor_form(T, y))
    if d == 2:
        thetas = np.linspace(0.0, math.pi, 721)
        vals = [absval(np.array([math.cos(t), math.sin(t)])) for t in thetas]
        i = int(np.argmax(vals))
        step = thetas[1] - thetas[0]
        res = optimize.minimize_scalar(
            lambda t: -absval(np.array([math.cos(t), math.sin(t)])),
            bracket=(thetas[i] - step, thetas[i], thetas[i] + step), method="golden", tol=1e-12,
        )
        t = res.x if -res.fun >= vals[i] else thetas[i]
        y = np.array([math.cos(t), math.sin(t)])
        return absval(y), y
    # d == 3: Fibonacci points on the half sphere, then Nelder-Mead in angles.
    n = 4000
    i = np.arange(n) + 0.5
    z = i / n
    phi = math.pi * (1 + 5**0.5) * i
    rr = np.sqrt(1 - z**2)
    pts = np.stack([rr * np.cos(phi), rr * np.sin(phi), z], axis=1)
    vals = np.array([absval(p) for p in pts])
    best = pts[int(np.argmax(vals))]

    def to_vec(a):
        th, ph = a
        return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])

    a0 = np.array([math.acos(np.clip(best[2], -1, 1)), math.atan2(best[1], best[0])])
    res = optimize.minimize(lambda a: -absval(to_vec(a)), a0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    y = to_vec(res.x) if -res.fun >= vals.max() else best
    return absval(y), y


def injective_norm(T, *, n_starts: int = 64, seed: int = 0, max_iter: int = 1000,
                   tol: float = 1e-13, refine: bool = True) -> InjectiveNorm:
    """max over unit y of |<T, y^{(x) r}>| for a symmetric tensor T.

    Orders 1 and 2 are exact (Euclidean and spectral norms).  For r >= 3
    the value is the best of shifted symmetric power iterations on T and -T
    from ``n_starts`` seeded starts, plus a sphere search when d <= 3.  It
    is always a lower bound on the true norm, and adding starts never
    lowers it.
    """
    T = np.asarray(T, dtype=float)
    r = T.ndim
    if r == 0:
        return InjectiveNorm(abs(float(T)), np.zeros(0))
    d = T.shape[0]
    if any(s != d for s in T.shape):
        raise ValueError("tensor must have equal dimensions")
    if r == 1:
        nrm = float(np.linalg.norm(T))
        return InjectiveNorm(nrm, T / nrm if nrm > 0 else np.eye(d)[0])
    if r == 2:
        evals, evecs = np.linalg.eigh(0.5 * (T + T.T))
        i = int(np.argmax(np.abs(evals)))
        return InjectiveNorm(float(abs(evals[i])), evecs[:, i])
    fro = float(np.linalg.norm(T))
    if fro == 0:
        return InjectiveNorm(0.0, np.eye(d)[0])
    alpha = (r - 1) * fro
    rng = substream(seed, "injective_norm")
    starts = rng.standard_normal((n_starts, d))
    best_val, best_y = -1.0, None
    for y0 in starts:
        for sign in (1.0, -1.0):
            v, y = _sshopm(sign * T, y0, alpha, max_iter, tol)
            if v > best_val:
                best_val, best_y = v, y
    if refine and d in (2, 3):
        v, y = _sphere_refine(T, d)
        if v > best_val:
            best_val, best_y = v, y
    return InjectiveNorm(best_val, best_y)


def moment_distances(a: MomentVector, b: MomentVector, **kw) -> np.ndarray:
    """Injective norm of M_r(a) - M_r(b) for every r."""
    diff = a - b
    if a.d == 1:
        return np.array([abs(float(t[0])) for t in diff.tensors])
    return np.array([injective_norm(diff.to_dense(r), **kw).value for r in range(1, a.R + 1)])


def lemma_eps(dists) -> float:
    """Smallest eps with dist_r <= eps (r / (c0 sqrt(log 1/eps)))^r for every r.

    c0 = 8 pi e.  Returns ``inf`` when no eps < 1 works.
    """
    dists = np.asarray(dists, dtype=float)
    if np.all(dists == 0):
        return 0.0
    r = np.arange(1, len(dists) + 1)

    def ok(log_eps):
        eps = math.exp(log_eps)
        scale = (r / (COLLISION_C0 * math.sqrt(-log_eps))) ** r
        return bool(np.all(dists <= eps * scale))

    lo, hi = -700.0, -1e-9
    if not ok(hi):
        return math.inf
    if ok(lo):
        return math.exp(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


# --------------------------------------------------------------------------
# Distances between mixtures
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    stderr: float = 0.0
    method: str = "closed"
    z: float = 1.96

    @property
    def ci(self) -> tuple[float, float]:
        return (self.value - self.z * self.stderr, self.value + self.z * self.stderr)

    def covers(self, x: float) -> bool:
        lo, hi = self.ci
        return lo <= x <= hi


def _check_pair(G: MixtureParams, G2: MixtureParams) -> None:
    if G.d != G2.d:
        raise ValueError(f"dimension mismatch: {G.d} vs {G2.d}")


def _cross_l2(A: MixtureParams, B: MixtureParams) -> float:
    """int f_A f_B for the sigma^{-d} exp(-pi ||x-mu||^2/sigma^2) convention."""
    s2 = A.sigmas[:, None] ** 2 + B.sigmas[None, :] ** 2
    sq = ((A.means[:, None, :] - B.means[None, :, :]) ** 2).sum(axis=2)
    terms = s2 ** (-A.d / 2) * np.exp(-math.pi * sq / s2)
    return float(A.weights @ terms @ B.weights)


def _box(G: MixtureParams, G2: MixtureParams, pad: float = 8.0) -> tuple[np.ndarray, np.ndarray]:
    means = np.vstack([G.means, G2.means])
    smax = max(G.sigmas.max(), G2.sigmas.max())
    return means.min(axis=0) - pad * smax, means.max(axis=0) + pad * smax


def _gl_grid_2d(lo, hi, panels: int = 64, order: int = 16):
    x, w = np.polynomial.legendre.leggauss(order)
    axes = []
    for a, b in zip(lo, hi):
        edges = np.linspace(a, b, panels + 1)
        h = np.diff(edges) / 2
        mid = (edges[:-1] + edges[1:]) / 2
        axes.append(((mid[:, None] + h[:, None] * x[None, :]).ravel(), (h[:, None] * w[None, :]).ravel()))
    (x0, w0), (x1, w1) = axes
    X, Y = np.meshgrid(x0, x1, indexing="ij")
    W = w0[:, None] * w1[None, :]
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def _diff(G, G2):
    return lambda x: pdf_at(G, x) - pdf_at(G2, x)


def _sign_changes_1d(G, G2, lo, hi, n: int = 4001) -> list[float]:
    xs = np.linspace(lo, hi, n)
    h = pdf_at(G, xs[:, None]) - pdf_at(G2, xs[:, None])
    roots = []
    fn = lambda t: float(pdf_at(G, np.array([t])) - pdf_at(G2, np.array([t])))
    for i in np.flatnonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0):
        roots.append(optimize.brentq(fn, xs[i], xs[i + 1], xtol=1e-14))
    return roots


def _mc_pair(G, G2, n: int, seed: int, stream: str):
    """Stratified draws from the average of the two densities."""
    half = n // 2
    a = sample(G, half, seed, stream=f"{stream}:a").points
    b = sample(G2, n - half, seed, stream=f"{stream}:b").points
    return a, b


def _stratified(values_a, values_b) -> tuple[float, float]:
    mean = 0.5 * (values_a.mean() + values_b.mean())
    se = 0.5 * math.sqrt(values_a.var(ddof=1) / len(values_a) + values_b.var(ddof=1) / len(values_b))
    return float(mean), se


def l2_distance(G: MixtureParams, G2: MixtureParams, method: str = "closed", *,
                n: int = 200_000, seed: int = 0, z: float = 1.96) -> DistanceEstimate:
    """||f - f2||_2 by closed form, quadrature (d <= 2) or Monte Carlo."""
    _check_pair(G, G2)
    if method == "closed":
        sq = _cross_l2(G, G) + _cross_l2(G2, G2) - 2 * _cross_l2(G, G2)
        return DistanceEstimate(math.sqrt(max(sq, 0.0)), 0.0, "closed", z)
    if method == "quadrature":
        lo, hi = _box(G, G2)
        if G.d == 1:
            val, _ = integrate.quad(lambda t: _diff(G, G2)(np.array([t])) ** 2, lo[0], hi[0],
                                    points=sorted(set(np.concatenate([G.means[:, 0], G2.means[:, 0]]))),
                                    limit=500, epsabs=1e-15, epsrel=1e-12)
        elif G.d == 2:
            pts, w = _gl_grid_2d(lo, hi)
            val = float(w @ _diff(G, G2)(pts) ** 2)
        else:
            raise ValueError("quadrature is available for d <= 2")
        return DistanceEstimate(math.sqrt(max(val, 0.0)), 0.0, "quadrature", z)
    if method == "mc":
        a, b = _mc_pair(G, G2, n, seed, "l2")
        h = lambda x: _diff(G, G2)(x) ** 2 / (0.5 * (pdf_at(G, x) + pdf_at(G2, x)))
        sq, se = _stratified(h(a), h(b))
        val = math.sqrt(max(sq, 0.0))
        return DistanceEstimate(val, se / (2 * val) if val > 0 else se, "mc", z)
    raise ValueError(f"unknown method {method!r}")


def l1_distance(G: MixtureParams, G2: MixtureParams, method: str = "quadrature", *,
                n: int = 200_000, seed: int = 0, z: float = 1.96) -> DistanceEstimate:
    """||f - f2||_1 (twice the total variation distance)."""
    _check_pair(G, G2)
    if method == "quadrature":
        lo, hi = _box(G, G2)
        if G.d == 1:
            cuts = sorted(set(_sign_changes_1d(G, G2, lo[0], hi[0])) | set(G.means[:, 0]) | set(G2.means[:, 0]))
            edges = [lo[0], *[c for c in cuts if lo[0] < c < hi[0]], hi[0]]
            fn = lambda t: abs(float(_diff(G, G2)(np.array([t]))))
            total = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                total += integrate.quad(fn, a, b, limit=200, epsabs=1e-15, epsrel=1e-12)[0]
            return DistanceEstimate(total, 0.0, "quadrature", z)
        if G.d == 2:
            pts, w = _gl_grid_2d(lo, hi, panels=128)
            return DistanceEstimate(float(w @ np.abs(_diff(G, G2)(pts))), 0.0, "quadrature", z)
        raise ValueError("quadrature is available for d <= 2")
    if method == "mc":
        a, b = _mc_pair(G, G2, n, seed, "l1")
        h = lambda x: np.abs(_diff(G, G2)(x)) / (0.5 * (pdf_at(G, x) + pdf_at(G2, x)))
        val, se = _stratified(h(a), h(b))
        # h lies in [0, 2]; near-disjoint pairs sample the overlap too rarely
        # for the sample variance, so keep at least one-hit resolution
        return DistanceEstimate(val, max(se, 2.0 / n), "mc", z)
    raise ValueError(f"unknown method {method!r}")


def tv_distance(G: MixtureParams, G2: MixtureParams, method: str = "quadrature", **kw) -> DistanceEstimate:
    est = l1_distance(G, G2, method, **kw)
    return DistanceEstimate(est.value / 2, est.stderr / 2, est.method, est.z)


# --------------------------------------------------------------------------
# Scheffé tournament
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TournamentConfig:
    candidates: tuple
    delta: float
    m: int | None = None
    n_mc: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 2:
            raise ValueError("a tournament needs at least two candidates")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be at least 1")
        if len({c.d for c in self.candidates}) != 1:
            raise ValueError("candidates must share a dimension")

    @property
    def sample_budget(self) -> int:
        """Default m = ceil(2 log|T| / delta^2)."""
        if self.m is not None:
            return self.m
        return math.ceil(2 * math.log(len(self.candidates)) / self.delta**2)

    @property
    def mc_budget(self) -> int:
        return self.n_mc if self.n_mc is not None else 16 * self.sample_budget


@dataclass
class TournamentResult:
    index: int | None
    p_hat: np.ndarray  # p_hat[i, j]: empirical mass of {f_i > f_j}
    p_model: np.ndarray  # p_model[i, j]: mass of the same set under candidate i
    worst_gap: np.ndarray  # per candidate, max_j |p_hat - p_model|
    threshold: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "threshold": self.threshold,
            "worst_gap": self.worst_gap.tolist(),
            "margins": (self.threshold - self.worst_gap).tolist(),
        }


class TournamentError(RuntimeError):
    def __init__(self, message: str, result: TournamentResult):
        super().__init__(message)
        self.result = result


def scheffe_select(cfg: TournamentConfig, samples, seed: int = 0) -> TournamentResult:
    """Return the first candidate whose Scheffé sets match the data.

    Candidate i passes when |p_ij - Pr_i[f_i > f_j]| <= 3 delta / 2 for all j,
    with p_ij the empirical mass of {f_i > f_j}.  The model masses are Monte
    Carlo estimates from each candidate.
    """
    pts = samples.points if isinstance(samples, SampleBatch) else np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    T = len(cfg.candidates)
    dens_data = np.stack([pdf_at(c, pts) for c in cfg.candidates])  # (T, m)
    p_hat = (dens_data[:, None, :] > dens_data[None, :, :]).mean(axis=2)
    p_model = np.zeros((T, T))
    for i, c in enumerate(cfg.candidates):
        draws = sample(c, cfg.mc_budget, seed, stream=f"scheffe:{i}").points
        dens = np.stack([pdf_at(o, draws) for o in cfg.candidates])
        p_model[i] = (dens[i][None, :] > dens).mean(axis=1)
    gap = np.abs(p_hat - p_model)
    np.fill_diagonal(gap, 0.0)
    worst = gap.max(axis=1)
    thr = 1.5 * cfg.delta
    passing = np.flatnonzero(worst <= thr)
    res = TournamentResult(int(passing[0]) if len(passing) else None, p_hat, p_model, worst, thr)
    if res.index is None:
        raise TournamentError(f"no candidate passed (smallest gap {worst.min():.4g} > {thr:.4g})", res)
    return res


# --------------------------------------------------------------------------
# Collision search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionConfig:
    n_mixtures: int = 2000
    k: int = 4
    d: int = 1
    R: int = 6
    min_delta_param: float = 0.1
    gamma: float = 0.1
    seed: int = 0
    n_refine: int = 200
    tv_method: str = "auto"

    def __post_init__(self):
        if self.n_mixtures < 2 or self.k < 1 or self.d < 1 or self.R < 1:
            raise ValueError("n_mixtures >= 2 and k, d, R >= 1 are required")


@dataclass
class PairReport:
    i: int
    j: int
    moment_distances: list
    moment_distance: float
    lemma_eps: float
    delta_param: float
    tv: float
    tv_stderr: float
    separation_ok: tuple
    means_i: list = field(default_factory=list)
    means_j: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "i": self.i, "j": self.j,
            "moment_distances": list(self.moment_distances),
            "moment_distance": self.moment_distance,
            "lemma_eps": self.lemma_eps,
            "delta_param": self.delta_param,
            "tv": self.tv, "tv_stderr": self.tv_stderr,
            "separation_ok": list(self.separation_ok),
            "means_i": self.means_i, "means_j": self.means_j,
            "c0": COLLISION_C0, "c1": COLLISION_C1,
        }


class CollisionError(RuntimeError):
    pass


def min_separation(means) -> float:
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    if mu.shape[0] < 2:
        return math.inf
    return float(np.linalg.norm(mu[:, None] - mu[None], axis=2)[np.triu_indices(mu.shape[0], 1)].min())


def random_mean_sets(cfg: CollisionConfig) -> np.ndarray:
    """(n, k, d) means uniform in the radius-sqrt(d) ball, filtered by separation.

    Sets with a pair of means closer than gamma sqrt(d) are redrawn.
    """
    rng = substream(cfg.seed, "collision", "means")
    out = np.empty((cfg.n_mixtures, cfg.k, cfg.d))
    radius = math.sqrt(cfg.d)
    filled = 0
    while filled < cfg.n_mixtures:
        g = rng.standard_normal((cfg.k, cfg.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rr = radius * rng.random(cfg.k) ** (1 / cfg.d)
        mu = g * rr[:, None]
        if min_separation(mu) < cfg.gamma * radius:
            continue
        out[filled] = mu[np.lexsort(mu.T[::-1])]
        filled += 1
    return out


def _pairwise_1d(moms: np.ndarray, block: int = 512) -> np.ndarray:
    """max_r |M_r(a) - M_r(b)| for all pairs, moms of shape (n, R)."""
    n = moms.shape[0]
    out = np.zeros((n, n))
    for s in range(0, n, block):
        out[s:s + block] = np.abs(moms[s:s + block, None, :] - moms[None, :, :]).max(axis=2)
    return out


def _pairwise_frobenius(mvs: list) -> np.ndarray:
    """max_r of the Frobenius norm of the difference, an upper bound on the injective norm."""
    n = len(mvs)
    R = mvs[0].R
    d = mvs[0].d
    out = np.zeros((n, n))
    for r in range(1, R + 1):
        mult = np.sqrt([multiplicity(a) for a in multisets(d, r)])
        X = np.stack([m.tensors[r - 1] for m in mvs]) * mult
        sq = (X**2).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
        out = np.maximum(out, np.sqrt(d2))
    return out


def _tv(G, G2, method: str, seed: int) -> DistanceEstimate:
    if method == "auto":
        method = "quadrature" if G.d <= 2 else "mc"
    return tv_distance(G, G2, method, seed=seed)


@dataclass
class CollisionResult:
    best: PairReport
    mean_sets: np.ndarray
    distance_matrix: np.ndarray
    aggregation: str

    def sweep(self, n_bins: int = 5, per_bin: int = 15, lo: float | None = None, hi: float = 0.1,
              tv_method: str = "auto") -> list[dict]:
        return collision_sweep(self, n_bins=n_bins, per_bin=per_bin, lo=lo, hi=hi, tv_method=tv_method)


def _pair_report(cfg: CollisionConfig, sets, i, j, tv_method: str) -> PairReport:
    Gi, Gj = standard_mixture(sets[i]), standard_mixture(sets[j])
    mi, mj = mean_moments(sets[i], cfg.R), mean_moments(sets[j], cfg.R)
    dists = moment_distances(mi, mj)
    dp, _ = param_distance(Gi, Gj)
    tv = _tv(Gi, Gj, tv_method, cfg.seed)
    sep = tuple(min_separation(G.means) >= cfg.gamma * math.sqrt(cfg.d) for G in (Gi, Gj))
    return PairReport(int(i), int(j), dists.tolist(), float(dists.max()), lemma_eps(dists), dp,
                      tv.value, tv.stderr, sep, sets[i].tolist(), sets[j].tolist())


def collision_search(cfg: CollisionConfig, mean_sets=None) -> CollisionResult:
    """Pair of random mean-sets with the smallest moment distance among
    those at parameter distance >= ``cfg.min_delta_param``.

    The moment distance is max_r of the injective norm of M_r differences.
    In d = 1 it is computed for all pairs; otherwise pairs are ranked by a
    Frobenius upper bound and the top ``n_refine`` are rescored exactly.
    ``mean_sets`` (n, k, d) replaces the random collection when given.
    """
    if mean_sets is None:
        sets = random_mean_sets(cfg)
    else:
        sets = np.asarray(mean_sets, dtype=float).reshape(-1, cfg.k, cfg.d)
        if len(sets) < 2:
            raise ValueError("need at least two mean-sets")
    mvs = [mean_moments(s, cfg.R) for s in sets]
    if cfg.d == 1:
        moms = np.array([[t[0] for t in m.tensors] for m in mvs])
        D = _pairwise_1d(moms)
        agg = "max_r injective"
    else:
        D = _pairwise_frobenius(mvs)
        agg = "max_r frobenius (ranking), injective (reported)"
    iu, ju = np.triu_indices(len(sets), 1)
    order = np.argsort(D[iu, ju], kind="stable")
    checked = 0
    best = None
    for idx in order:
        i, j = iu[idx], ju[idx]
        dp, _ = param_distance(standard_mixture(sets[i]), standard_mixture(sets[j]))
        if dp < cfg.min_delta_param:
            continue
        if cfg.d == 1:
            best = (i, j)
            break
        score = moment_distances(mvs[i], mvs[j]).max()
        if best is None or score < best[2]:
            best = (i, j, score)
        checked += 1
        if checked >= cfg.n_refine:
            break
    if best is None:
        raise CollisionError(f"no pair with delta_param >= {cfg.min_delta_param} among {len(sets)} mixtures")
    rep = _pair_report(cfg, sets, best[0], best[1], cfg.tv_method)
    return CollisionResult(rep, sets, D, agg)


def collision_sweep(result: CollisionResult, *, n_bins: int = 5, per_bin: int = 15,
                    lo: float | None = None, hi: float = 0.1, tv_method: str = "auto",
                    min_delta_param: float = 0.1, R: int | None = None, seed: int = 0) -> list[dict]:
    """Median TV of qualifying pairs in log-spaced moment-distance bins.

    Bins run from the best pair's distance up to ``hi``; the ``per_bin``
    pairs closest to each bin's lower edge are evaluated.
    """
    sets = result.mean_sets
    D = result.distance_matrix
    iu, ju = np.triu_indices(len(sets), 1)
    vals = D[iu, ju]
    lo = lo if lo is not None else max(result.best.moment_distance, 1e-12)
    edges = np.geomspace(lo, hi, n_bins + 1)
    rows = []
    for b in range(n_bins):
        sel = np.flatnonzero((vals >= edges[b]) & (vals < edges[b + 1]))
        sel = sel[np.argsort(vals[sel], kind="stable")]
        tvs, md = [], []
        for idx in sel:
            Gi, Gj = standard_mixture(sets[iu[idx]]), standard_mixture(sets[ju[idx]])
            if param_distance(Gi, Gj)[0] < min_delta_param:
                continue
            tvs.append(_tv(Gi, Gj, tv_method, seed).value)
            md.append(vals[idx])
            if len(tvs) >= per_bin:
                break
        rows.append({
            "bin_lo": float(edges[b]), "bin_hi": float(edges[b + 1]), "n_pairs": len(tvs),
            "median_moment_distance": float(np.median(md)) if md else math.nan,
            "median_tv": float(np.median(tvs)) if tvs else math.nan,
        })
    return rows
