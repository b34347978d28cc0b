"""Acceptance suite.

Each test prints one ``PASS``/``FAIL`` line (also repeated in the terminal
summary).  Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest
from scipy import special

from artifact import harness
from artifact.harness import validate_config
from artifact.identifiability import l1_distance
from artifact.init_lowdim import (
    InitConfig,
    NetConfig,
    build_net,
    c_d,
    completeness_violations,
    initialize,
    soundness_violations,
)
from artifact.instances import perturbed_means, planted_mixture
from artifact.mixture import (
    Component,
    MixtureParams,
    match_means,
    sample,
    save_mixture,
    separation_audit,
    standard_mixture,
    tv_upper_bound_pinsker,
)
from artifact.numerics import error_recursion_bound, finite_diff_jacobian
from artifact.pca import projection_errors, reduce
from artifact.refine import (
    Known,
    RefineConfig,
    build_regions,
    eval_F,
    eval_Fprime,
    eval_system,
    jacobian_bound_B,
    leakage_report,
    lipschitz_estimate_1d,
    refine,
)
from artifact.seeding import substream

pytestmark = pytest.mark.slow


def xstar(mix):
    return (mix.means / mix.sigmas[:, None]).ravel()


def conservative_inverse_bound(J, se, z=3.0):
    """Varah bound after moving every entry z standard errors against dominance."""
    A = np.abs(J)
    diag = np.diag(A) - z * np.diag(se)
    off = (A + z * se).sum(axis=1) - np.diag(A + z * se)
    margin = float((diag - off).min())
    return 1 / margin if margin > 0 else math.inf


def test_criterion_01_exact_quadratic_convergence(verdict):
    t0 = time.perf_counter()
    mix = standard_mixture([[-10.0], [0.0], [10.0]])
    known = Known.of(mix)
    z = mix.means + 0.05 * np.array([[1.0], [-1.0], [1.0]])
    res = refine(mix, z, known, RefineConfig(delta=1e-10, iterations=4, exact_quadrature=True))
    rep = res.report
    err = rep.errors(xstar(mix))
    rng = np.random.default_rng(0)
    probes = [rep.x0, *rep.iterates] + [xstar(mix) + rng.uniform(-0.05, 0.05, 3) for _ in range(50)]
    L = lipschitz_estimate_1d(probes, res.regions, known)
    # steps that start at the rounding floor carry no rate information
    ratios = [(err[t + 1] / err[t] ** 2, 1.05 * L * rep.inverse_norms[t])
              for t in range(len(err) - 1) if err[t] > 1e-7]
    # the same recursion with the measured quadrature tolerances, at every step,
    # allowing one ulp of the largest coordinate for representing the iterate
    ulp = float(np.spacing(np.abs(xstar(mix)).max()))
    recursion = all(
        err[t + 1] <= error_recursion_bound(err[t], L, rep.inverse_norms[t], rep.eta1, rep.eta2[t], rep.eta3[t],
                                            jacobian_bound_B(known.stats(z))) + ulp
        for t in range(len(err) - 1)
    )
    final = float(np.abs(res.means - mix.means).max())
    elapsed = time.perf_counter() - t0
    ok = (final <= 1e-8 and rep.n_iterations <= 4 and all(r <= b for r, b in ratios) and recursion
          and elapsed < 10)
    shown = ", ".join(f"{r:.3g} <= {b:.3g}" for r, b in ratios)
    verdict(1, ok, f"error {final:.2e} after {rep.n_iterations} iterations; eps ratio vs 1.05 L ||J^-1||: {shown}; "
                   f"noisy recursion holds at every step: {recursion}; {elapsed:.1f}s")


def dominance_instance(seed, d):
    k = 4 if d == 1 else 5
    return planted_mixture(k, d, 4.0, seed, weights={"dirichlet": [5.0, 0.1]}, sigmas={"uniform": [0.8, 1.25]})


def test_criterion_02_diagonal_dominance(verdict):
    t0 = time.perf_counter()
    bounds = []
    for seed in range(10):
        for d in (1, 3):
            mix = dominance_instance(seed, d)
            assert all(p.passed for p in separation_audit(mix, 4.0))
            known = Known.of(mix)
            regions = build_regions(perturbed_means(mix, 0.02, seed), known)
            if d == 1:
                J = eval_Fprime(xstar(mix), regions, known, method="quadrature")
                bounds.append(conservative_inverse_bound(J.value, np.zeros_like(J.value), 0.0))
            else:
                J = eval_Fprime(xstar(mix), regions, known, n=200_000, seed=seed)
                bounds.append(conservative_inverse_bound(J.value, J.stderr))
    elapsed = time.perf_counter() - t0
    ok = max(bounds) <= 4 and elapsed < 120
    verdict(2, ok, f"worst Varah bound {max(bounds):.3f} over 20 instances (10 in d=1, 10 in d=3); {elapsed:.1f}s")


def sampled_instance(seed, k=8, d=3):
    sep = 4 * 2 * math.sqrt(math.log(k))
    rng = substream(seed, "acceptance", "refine")
    pts: list = []
    while len(pts) < k:
        p = rng.uniform(-1, 1, d) * sep * 1.6
        if all(np.linalg.norm(p - q) >= sep for q in pts):
            pts.append(p)
    return standard_mixture(np.array(pts))


def sampled_errors(n_b, trials=20):
    out = []
    for s in range(trials):
        mix = sampled_instance(s)
        z = perturbed_means(mix, 0.02, s)
        cfg = RefineConfig(delta=1e-4, iterations=6, n_jacobian=100_000, seed=s)
        res = refine(sample(mix, n_b, s), z, Known.of(mix), cfg)
        out.append(float((np.linalg.norm(res.means - mix.means, axis=1) / mix.sigmas).max()))
    return np.array(out)


def test_criterion_03_sampled_refinement(verdict):
    t0 = time.perf_counter()
    base = sampled_errors(500_000)
    double = sampled_errors(1_000_000)
    cut = 1 - np.median(double) / np.median(base)
    elapsed = time.perf_counter() - t0
    hits = int((base <= 0.02).sum())
    ok = hits >= 18 and cut >= 0.25 and elapsed < 600
    verdict(3, ok, f"{hits}/20 trials <= 0.02 (median {np.median(base):.4f}); doubling N_b cuts the median by "
                   f"{100 * cut:.1f}%; {elapsed:.1f}s")


def test_criterion_04_estimator_correctness(verdict):
    rng = np.random.default_rng(4)
    worst_mc = worst_fd = 0.0
    for case in range(50):
        k = 2 + case % 3
        # weak separation so the regions truncate and the estimators are not trivially exact
        c = (1.0, 1.5, 2.0, 4.0)[case % 4]
        mix = planted_mixture(k, 1, c, 100 + case, sigmas={"uniform": [0.8, 1.25]})
        known = Known.of(mix)
        regions = build_regions(perturbed_means(mix, 0.03, case), known)
        x = xstar(mix) + rng.uniform(-0.05, 0.05, k)
        Fq, Jq = eval_system(x, regions, known, method="quadrature")
        Fm, Jm = eval_system(x, regions, known, n=100_000, seed=case)
        worst_mc = max(worst_mc,
                       (np.abs(Fm.value - Fq.value) / np.maximum(np.hypot(Fm.stderr, Fq.stderr), 1e-15)).max(),
                       (np.abs(Jm.value - Jq.value) / np.maximum(np.hypot(Jm.stderr, Jq.stderr), 1e-15)).max())
        fd = finite_diff_jacobian(lambda v: eval_F(v, regions, known, method="quadrature").value, x, h=1e-5)
        tol = 4 * Jm.stderr + 1e-6
        worst_fd = max(worst_fd, (np.abs(Jm.value - fd) / tol).max())
    ok = worst_mc <= 4 and worst_fd <= 1
    verdict(4, ok, f"largest MC vs quadrature gap {worst_mc:.2f} combined SE; "
                   f"largest Jacobian vs finite-difference gap {worst_fd:.2f} of tolerance (50 pairs)")


def test_criterion_05_leakage(verdict):
    worst_own = worst_cross = math.inf
    passed = True
    for i in range(10):
        d = 1 + i % 3
        mix = planted_mixture(2 + i % 2, d, 4.0, 200 + i, weights={"dirichlet": [5.0, 0.1]})
        regions = build_regions(perturbed_means(mix, 0.02, i), Known.of(mix))
        for e in leakage_report(mix, regions, n=200_000, seed=i):
            passed &= e.passes()
            worst_own = min(worst_own, e.own_mass - e.own_threshold)
            worst_cross = min(worst_cross, e.cross_threshold - e.cross_mass)
    verdict(5, passed, f"10 instances, d in {{1,2,3}}; min own-mass slack {worst_own:.4f}, "
                       f"min cross-mass slack {worst_cross:.2e}")


def pca_instance(seed, k=6, d=64, rho=4.0):
    rng = substream(seed, "acceptance", "pca")
    w = rng.dirichlet(np.full(k, 5.0))
    while w.min() < 0.1:
        w = rng.dirichlet(np.full(k, 5.0))
    u = rng.standard_normal((k, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    means = u * rng.uniform(1.0, rho, k)[:, None]
    return MixtureParams(w, means, rng.uniform(0.5, 1.5, k))


def test_criterion_06_pca(verdict):
    t0 = time.perf_counter()
    worst = []
    for s in range(20):
        mix = pca_instance(s)
        rep = reduce(sample(mix, 200_000, s), 6)
        worst.append(projection_errors(rep, mix.means).max())
    elapsed = time.perf_counter() - t0
    hits = int((np.array(worst) <= 0.05).sum())
    verdict(6, hits >= 18 and elapsed < 60, f"{hits}/20 trials with max projection error <= 0.05 "
                                            f"(worst {max(worst):.4f}); {elapsed:.1f}s")


def test_criterion_07_low_dimensional_initializer(verdict):
    t0 = time.perf_counter()
    side = 6 * math.sqrt(2)
    mix = standard_mixture(np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float) * side - side / 2)
    stats = mix.stats()
    net_cfg = NetConfig.from_stats(stats, 2, radius=side, spacing=0.05, ball_radius=0.3, eps0=0.2)
    rep = initialize(sample(mix, 1_000_000, 7), 4, stats, InitConfig(net_cfg, kappa="gap"))
    errors, order = match_means(rep.means, mix.means)
    mean_err = float(errors.max())
    sig_err = float(np.abs(rep.sigmas - mix.sigmas[order]).max())
    w_err = float(np.abs(rep.weights - mix.weights[order]).max())
    sampled_ok = len(rep.cluster_sizes) == 4 and mean_err <= 0.1 and sig_err <= 0.05 and w_err <= 0.02

    eps0 = 0.2
    coarse = build_net(NetConfig(radius=side, spacing=0.05, ball_radius=0.05, eps0=eps0), 2)
    # the completeness radius is ~3e-4, far below any global spacing we can afford,
    # so each mean gets a patch a quarter of that spacing
    r = eps0 / 32 * math.sqrt(2) / 32
    patch = build_net(NetConfig(radius=20 * r, spacing=r / 4, ball_radius=r, eps0=eps0), 2)
    net = np.concatenate([coarse, *(m + patch for m in mix.means)])
    unsound = len(soundness_violations(mix, net, eps0))
    incomplete, n_checked = completeness_violations(mix, net, eps0)
    exact_ok = unsound == 0 and len(incomplete) == 0 and n_checked >= 4
    elapsed = time.perf_counter() - t0
    verdict(7, sampled_ok and exact_ok and elapsed < 300,
            f"{len(rep.cluster_sizes)} clusters, mean err {mean_err:.4f}, sigma err {sig_err:.4f}, "
            f"weight err {w_err:.4f}; exact net of {len(net)} points: {unsound} unsound, "
            f"{len(incomplete)} incomplete of {n_checked}; {elapsed:.1f}s")


def test_criterion_08_weight_constant(verdict):
    c1 = c_d(1)
    identity = special.erf(1 / math.sqrt(2))
    ok = abs(c1 - 0.682689) <= 1e-6 and abs(c1 - identity) <= 1e-12
    verdict(8, ok, f"c_1 = {c1:.9f}, one-sigma mass {identity:.9f}")


def tournament_files(tmp_path, seed):
    truth = MixtureParams([0.4, 0.6], [[-1.0], [1.5]], [1.0, 1.2])
    rng = substream(seed, "acceptance", "tournament")
    save_mixture(truth, tmp_path / "truth.json")
    names = []
    scales = np.concatenate([[0.02], rng.uniform(0.1, 1.5, 19)])
    for i, s in enumerate(rng.permutation(scales)):
        shift = s * rng.choice([-1.0, 1.0], 2)
        cand = MixtureParams(truth.weights, truth.means + shift[:, None], truth.sigmas)
        names.append(f"cand{i}.json")
        save_mixture(cand, tmp_path / names[-1])
    return names


def test_criterion_09_scheffe_tournament(verdict, tmp_path):
    t0 = time.perf_counter()
    tvs = []
    for seed in range(20):
        run_dir = tmp_path / f"t{seed}"
        run_dir.mkdir()
        names = tournament_files(run_dir, seed)
        raw = {"pipeline": "tournament", "seed": seed,
               "tournament": {"candidates": names, "truth": "truth.json", "delta": 0.05}}
        rec = harness.run(validate_config(raw, run_dir), run_dir / "out")
        tvs.append(rec.metrics["tv_to_truth"])
    elapsed = time.perf_counter() - t0
    hits = sum(tv <= 0.2 for tv in tvs)
    verdict(9, hits == 20 and elapsed < 120, f"{hits}/20 trials with TV <= 0.2 (worst {max(tvs):.4f}); {elapsed:.1f}s")


def test_criterion_10_moment_collision(verdict, tmp_path):
    t0 = time.perf_counter()
    raw = {"pipeline": "collide", "seed": 0,
           "collide": {"n_mixtures": 2000, "k": 4, "d": 1, "R": 6, "min_delta_param": 0.1}}
    rec = harness.run(validate_config(raw), tmp_path / "out")
    m = rec.metrics
    curve = [v for v in m["median_tv_by_bin"] if not math.isnan(v)]
    monotone = len(curve) >= 3 and all(a <= b for a, b in zip(curve, curve[1:]))
    elapsed = time.perf_counter() - t0
    ok = m["delta_param"] >= 0.1 and m["tv"] <= 1e-2 and monotone and elapsed < 300
    verdict(10, ok, f"best pair: moment distance {m['moment_distance']:.2e}, delta_param {m['delta_param']:.3f}, "
                    f"TV {m['tv']:.2e}; median TV by tolerance bin {[f'{v:.1e}' for v in curve]}; {elapsed:.1f}s")


def test_criterion_11_distance_oracles(verdict):
    rng = np.random.default_rng(11)
    worst_quad = 0.0
    covered = 0
    for case in range(20):
        sigma, shift = rng.uniform(0.5, 2.0), rng.uniform(0.02, 3.0)
        G = MixtureParams([1.0], [[0.0]], [sigma])
        G2 = MixtureParams([1.0], [[shift]], [sigma])
        closed = 2 * special.erf(shift * math.sqrt(math.pi) / (2 * sigma))
        worst_quad = max(worst_quad, abs(l1_distance(G, G2).value - closed))
        mc = l1_distance(G, G2, "mc", n=100_000, seed=case)
        covered += abs(mc.value - closed) <= 3 * mc.stderr
    below = 0
    for _ in range(100):
        mu, sig = rng.normal(0, 1, 2), rng.uniform(0.5, 2.0, 2)
        bound = tv_upper_bound_pinsker(Component(1.0, [mu[0]], sig[0]), Component(1.0, [mu[1]], sig[1]))
        tv = l1_distance(MixtureParams([1.0], [[mu[0]]], [sig[0]]), MixtureParams([1.0], [[mu[1]]], [sig[1]])).value / 2
        below += bound >= tv
    ok = worst_quad <= 1e-8 and covered == 20 and below == 100
    verdict(11, ok, f"quadrature vs erf max gap {worst_quad:.1e}; {covered}/20 MC 3-SE intervals cover; "
                    f"Pinsker >= TV on {below}/100 pairs")
