import itertools
import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import integrate, stats

from artifact.mixture import (
    Component,
    MixtureParams,
    gaussian_norm_tail,
    grad_pdf_at,
    hess_pdf_at,
    is_separated,
    load_mixture,
    match_means,
    param_distance,
    param_distance_bruteforce,
    pdf_at,
    sample,
    save_mixture,
    separation_audit,
    sigma_to_std,
    standard_mixture,
    tv_upper_bound_pinsker,
)


def single(mu=0.0, sigma=1.0, d=1):
    return MixtureParams([1.0], np.full((1, d), mu), [sigma])


def random_mixture(rng, k=3, d=2):
    w = rng.dirichlet(np.ones(k) * 3)
    return MixtureParams(w / w.sum(), rng.normal(0, 2, (k, d)), rng.uniform(0.5, 2.0, k))


def test_pdf_single_component_values():
    mix = single()
    npt.assert_allclose(pdf_at(mix, [0.0]), 1.0, rtol=1e-15)
    npt.assert_allclose(pdf_at(mix, [1.0]), math.exp(-math.pi), rtol=1e-15)


def test_pdf_two_components():
    mix = MixtureParams([0.5, 0.5], [[0.0], [2.0]], [1.0, 1.0])
    npt.assert_allclose(pdf_at(mix, [0.0]), 0.5 * (1 + math.exp(-4 * math.pi)), rtol=1e-15)


def test_pdf_matches_classical_normal():
    for sigma in (0.3, 1.0, 2.5):
        s = float(sigma_to_std(sigma))
        mix = single(0.7, sigma)
        for x in (-1.0, 0.7, 2.0):
            npt.assert_allclose(pdf_at(mix, [x]), stats.norm.pdf(x, 0.7, s), rtol=1e-12)


def test_pdf_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        pdf_at(single(d=2), [0.0, 0.0, 0.0])


def test_pdf_integrates_to_one():
    rng = np.random.default_rng(1)
    for _ in range(5):
        mix = random_mixture(rng, k=3, d=1)
        R = float(np.abs(mix.means).max() + 10 * mix.sigmas.max())
        breaks = sorted(mix.means[:, 0])
        total, _ = integrate.quad(lambda t: float(pdf_at(mix, [t])), -R, R, points=breaks, limit=400,
                                  epsabs=1e-13, epsrel=1e-13)
        npt.assert_allclose(total, 1.0, atol=1e-9)


def test_gradient_closed_forms():
    mix = single()
    npt.assert_array_equal(grad_pdf_at(mix, [0.0]), [0.0])
    npt.assert_allclose(grad_pdf_at(mix, [1.0]), [-2 * math.pi * math.exp(-math.pi)], rtol=1e-14)


def test_hessian_at_mean():
    for d, sigma in ((1, 1.0), (3, 0.7), (2, 1.8)):
        mix = MixtureParams([1.0], np.zeros((1, d)), [sigma])
        H = hess_pdf_at(mix, np.zeros(d))
        npt.assert_allclose(H, -2 * math.pi * sigma ** -(d + 2) * np.eye(d), rtol=1e-14)


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(100):
        mix = random_mixture(rng, k=int(rng.integers(1, 4)), d=int(rng.integers(1, 4)))
        x = mix.means[0] + rng.normal(0, 0.3, mix.d)
        e = np.eye(mix.d)
        fd_grad = np.array([(pdf_at(mix, x + h * e[i]) - pdf_at(mix, x - h * e[i])) / (2 * h) for i in range(mix.d)])
        g = grad_pdf_at(mix, x)
        npt.assert_allclose(g, fd_grad, rtol=1e-6, atol=1e-6 * max(1.0, float(np.abs(g).max())))
        fd_hess = np.array([(grad_pdf_at(mix, x + h * e[i]) - grad_pdf_at(mix, x - h * e[i])) / (2 * h)
                            for i in range(mix.d)])
        H = hess_pdf_at(mix, x)
        npt.assert_allclose(H, H.T, atol=1e-12)
        npt.assert_allclose(H, fd_hess, rtol=1e-5, atol=1e-5 * max(1.0, float(np.abs(H).max())))


def test_sample_moments():
    n = 1_000_000
    batch = sample(single(), n, seed=3)
    s2 = 1 / (2 * math.pi)
    assert abs(batch.points.mean()) <= 4 / math.sqrt(2 * math.pi * n)
    npt.assert_allclose(batch.points.var(), s2, rtol=0.02)


def test_sample_label_fractions():
    n = 200_000
    mix = MixtureParams([0.5, 0.5], [[0.0], [5.0]], [1.0, 1.0])
    labels = sample(mix, n, seed=11).component_labels
    assert abs((labels == 0).mean() - 0.5) <= 3 / math.sqrt(n)


def test_sample_is_deterministic():
    mix = random_mixture(np.random.default_rng(0))
    a = sample(mix, 5000, seed=42)
    b = sample(mix, 5000, seed=42)
    c = sample(mix, 5000, seed=43)
    npt.assert_array_equal(a.points, b.points)
    npt.assert_array_equal(a.component_labels, b.component_labels)
    assert not np.array_equal(a.points, c.points)


def test_param_distance_examples():
    G = standard_mixture([[0.0], [4.0]])
    G2 = standard_mixture([[0.1], [4.0]])
    v, perm = param_distance(G, G)
    assert v == 0.0 and perm == (0, 1)
    v, perm = param_distance(G, G2)
    npt.assert_allclose(v, 0.1, rtol=1e-12)
    assert perm == (0, 1)
    v, perm = param_distance(G, G2.permuted([1, 0]))
    npt.assert_allclose(v, 0.1, rtol=1e-12)
    assert perm == (1, 0)


def test_param_distance_matches_bruteforce_and_relabeling():
    rng = np.random.default_rng(5)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        G, G2 = random_mixture(rng, k, 2), random_mixture(rng, k, 2)
        v, _ = param_distance(G, G2)
        npt.assert_allclose(v, param_distance_bruteforce(G, G2)[0], rtol=1e-12)
        p = rng.permutation(k)
        npt.assert_allclose(param_distance(G.permuted(p), G2)[0], v, rtol=1e-12)
        npt.assert_allclose(param_distance(G, G2.permuted(p))[0], v, rtol=1e-12)


def test_param_distance_symmetric_for_equal_sigmas():
    rng = np.random.default_rng(6)
    a = standard_mixture(rng.normal(size=(4, 3)))
    b = standard_mixture(rng.normal(size=(4, 3)))
    npt.assert_allclose(param_distance(a, b)[0], param_distance(b, a)[0], rtol=1e-12)


def test_param_distance_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        param_distance(standard_mixture([[0.0], [1.0]]), standard_mixture([[0.0], [1.0], [2.0]]))


def test_match_means_recovers_permutation():
    truth = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    est = truth[[2, 0, 1]] + 0.01
    err, perm = match_means(est, truth)
    npt.assert_allclose(err, np.full(3, 0.01 * math.sqrt(2)), rtol=1e-9)
    npt.assert_array_equal(truth[perm], truth[[2, 0, 1]])


def test_separation_audit():
    far = standard_mixture([[0.0], [100.0]])
    (pair,) = separation_audit(far, 1.0)
    assert pair.passed and pair.lhs == 100.0
    same = MixtureParams([0.5, 0.5], [[1.0], [1.0]], [1.0, 1.0])
    (pair,) = separation_audit(same, 1.0)
    assert not pair.passed and pair.lhs == 0.0


def test_separation_rhs_for_standard_mixture():
    k, d, c = 8, 3, 2.0
    mix = standard_mixture(np.arange(k * d, dtype=float).reshape(k, d) * 50)
    expected = c * 2 * min(math.sqrt(d), math.sqrt(math.log(k)))
    for p in separation_audit(mix, c):
        npt.assert_allclose(p.rhs, expected, rtol=1e-14)
        assert p.regime == "sqrt_log"
    assert is_separated(mix, c)


def test_pinsker_examples():
    p = Component(1.0, [0.0], 1.0)
    assert tv_upper_bound_pinsker(p, p) == 0.0
    q = Component(1.0, [0.1], 1.0)
    npt.assert_allclose(tv_upper_bound_pinsker(p, q), math.sqrt(2 * math.pi) * 0.1, rtol=1e-14)
    npt.assert_allclose(tv_upper_bound_pinsker(p, q), 0.2507, atol=1e-4)


def test_norm_tail():
    t = gaussian_norm_tail(3, 18)
    npt.assert_allclose(t.bound, math.exp(-18), rtol=1e-15)
    bounds = [gaussian_norm_tail(4, t).bound for t in (0.5, 1, 2, 4)]
    assert all(a > b for a, b in itertools.pairwise(bounds))


def test_norm_tail_empirical():
    d, n = 3, 1_000_000
    rng = np.random.default_rng(9)
    x = rng.standard_normal((n, d)) * float(sigma_to_std(1.0))
    r2 = (x * x).sum(axis=1)
    for t in (1.0, 2.0, 4.0):
        tail = gaussian_norm_tail(d, t)
        assert (r2 >= tail.upper_threshold).mean() <= tail.bound
        assert (r2 <= tail.lower_threshold).mean() <= tail.bound


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixtureParams([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        MixtureParams([1.0], [[np.nan]], [1.0])
    with pytest.raises(ValueError):
        MixtureParams([1.0], [[0.0]], [0.0])


def test_json_round_trip(tmp_path):
    mix = random_mixture(np.random.default_rng(2), 4, 3)
    save_mixture(mix, tmp_path / "m.json")
    back = load_mixture(tmp_path / "m.json")
    npt.assert_array_equal(back.means, mix.means)
    npt.assert_array_equal(back.sigmas, mix.sigmas)
    npt.assert_allclose(back.weights, mix.weights, rtol=1e-15)
