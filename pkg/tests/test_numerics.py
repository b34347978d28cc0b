import numpy as np
import numpy.testing as npt
import pytest

from artifact.mixture import MixtureParams, grad_pdf_at, hess_pdf_at
from artifact.numerics import (
    SolveConfig,
    SolveError,
    SystemOracle,
    dominance_margin,
    error_recursion_bound,
    error_recursion_bound_chain,
    exact_oracle,
    finite_diff_jacobian,
    inf_operator_norm,
    newton_solve,
    varah_inverse_bound,
)


def test_varah_examples():
    vb = varah_inverse_bound([[3.0, -1.0], [-1.0, 3.0]])
    assert vb.dominant
    npt.assert_allclose(vb.margin, 2.0)
    npt.assert_allclose(vb.bound, 0.5)
    inv = np.array([[3.0, 1.0], [1.0, 3.0]]) / 8
    npt.assert_allclose(np.linalg.inv([[3.0, -1.0], [-1.0, 3.0]]), inv, rtol=1e-15)
    npt.assert_allclose(inf_operator_norm(inv), 0.5)
    assert varah_inverse_bound(np.eye(5)).bound == 1.0
    vb = varah_inverse_bound([[1.0, 2.0], [0.0, 1.0]])
    assert not vb.dominant and vb.margin == -1.0


def test_varah_rejects_non_square():
    with pytest.raises(ValueError):
        dominance_margin(np.ones((2, 3)))


def test_inf_operator_norm_examples():
    assert inf_operator_norm(np.eye(4)) == 1.0
    assert inf_operator_norm([[3.0, -1.0], [-1.0, 3.0]]) == 4.0
    assert inf_operator_norm(np.zeros((3, 3))) == 0.0


def test_varah_is_sound_on_random_dominant_matrices():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 21))
        A = rng.normal(size=(n, n))
        off = np.abs(A).sum(axis=1) - np.abs(np.diag(A))
        A[np.diag_indices(n)] = off + rng.uniform(1e-3, 2.0, n)
        vb = varah_inverse_bound(A)
        assert vb.dominant
        assert inf_operator_norm(np.linalg.inv(A)) <= vb.bound * (1 + 1e-12)


def test_finite_diff_examples():
    npt.assert_allclose(finite_diff_jacobian(lambda x: x, np.arange(4.0)), np.eye(4), atol=1e-10)
    npt.assert_allclose(finite_diff_jacobian(lambda x: x**2, [3.0], h=1e-5), [[6.0]], atol=1e-8)


def test_finite_diff_of_mixture_gradient():
    rng = np.random.default_rng(3)
    mix = MixtureParams([0.3, 0.7], rng.normal(size=(2, 3)), [0.8, 1.3])
    for _ in range(10):
        x = rng.normal(size=3) * 0.5
        H = hess_pdf_at(mix, x)
        fd = finite_diff_jacobian(lambda y: grad_pdf_at(mix, y), x, h=1e-6)
        npt.assert_allclose(fd, H, atol=1e-5 * max(1.0, np.abs(H).max()))


def test_newton_scalar_square_root():
    oracle = exact_oracle(lambda x: x**2, lambda x: np.diag(2 * x), [4.0])
    rep = newton_solve(oracle, [3.0], SolveConfig(max_iterations=3, stop_tolerance=1e-12))
    xs = [float(v[0]) for v in rep.iterates]
    npt.assert_allclose(xs[0], 13 / 6, rtol=1e-15)
    npt.assert_allclose(xs[1], 313 / 156, rtol=1e-15)
    assert abs(xs[2] - 2.0) < 1e-4
    assert rep.n_iterations == len(rep.step_norms) == len(rep.dominance_margins) == len(rep.inverse_norm_bounds)


def test_newton_scalar_quadratic_rate():
    oracle = exact_oracle(lambda x: x**2, lambda x: np.diag(2 * x), [4.0])
    rep = newton_solve(oracle, [3.0], SolveConfig(max_iterations=4, stop_tolerance=1e-14))
    errs = rep.errors([2.0])
    L = 2.0  # Lipschitz constant of F'(x) = 2x
    for t in range(len(errs) - 1):
        if errs[t] == 0 or errs[t + 1] == 0:
            break
        inv = rep.inverse_norms[t]
        assert errs[t + 1] <= 1.05 * L * inv * errs[t] ** 2


def test_newton_linear_system_one_step():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 5)) + 8 * np.eye(5)
    x_star = rng.normal(size=5)
    oracle = exact_oracle(lambda x: A @ x, lambda x: A, A @ x_star)
    rep = newton_solve(oracle, rng.normal(size=5), SolveConfig(max_iterations=5, stop_tolerance=1e-9))
    npt.assert_allclose(rep.iterates[0], x_star, atol=1e-12)
    assert rep.converged and rep.n_iterations == 2  # second step certifies the stop
    npt.assert_allclose(rep.step_norms[1], 0.0, atol=1e-12)


def test_newton_halts_on_non_dominant_jacobian():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    oracle = exact_oracle(lambda x: A @ x, lambda x: A, [1.0, 1.0])
    with pytest.raises(SolveError) as exc:
        newton_solve(oracle, [0.0, 0.0], SolveConfig(max_iterations=3, stop_tolerance=1e-9))
    assert exc.value.report.status == "not_dominant"
    rep = newton_solve(oracle, [0.0, 0.0], SolveConfig(3, 1e-9, require_dominance=False))
    npt.assert_allclose(rep.iterates[0], np.linalg.solve(A, [1.0, 1.0]))


def test_newton_halts_on_singular_jacobian():
    oracle = exact_oracle(lambda x: x**2, lambda x: np.diag(2 * x), [4.0])
    rep = newton_solve(oracle, [0.0], SolveConfig(3, 1e-9, require_dominance=False), raise_on_failure=False)
    assert rep.status == "singular" and not rep.converged


def test_newton_halts_outside_neighborhood():
    oracle = exact_oracle(lambda x: x**2, lambda x: np.diag(2 * x), [4.0])
    rep = newton_solve(oracle, [0.1], SolveConfig(5, 1e-9, neighborhood_radius=0.5), raise_on_failure=False)
    assert rep.status == "out_of_neighborhood"


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(max_iterations=0, stop_tolerance=1e-3)
    with pytest.raises(ValueError):
        SolveConfig(max_iterations=3, stop_tolerance=0.0)


def test_newton_is_deterministic():
    oracle = exact_oracle(lambda x: x**3 + x, lambda x: np.diag(3 * x**2 + 1), [2.0, 10.0])
    cfg = SolveConfig(6, 1e-12)
    a = newton_solve(oracle, [1.5, 2.5], cfg)
    b = newton_solve(oracle, [1.5, 2.5], cfg)
    assert a.to_dict() == b.to_dict()


def test_noise_floor_recursion():
    # F(x) = x + 0.1 x^3 componentwise, perturbed by bounded noise of known size.
    rng = np.random.default_rng(4)
    m = 4
    x_star = rng.uniform(-1, 1, m)
    b_true = x_star + 0.1 * x_star**3
    eta1, eta2, eta3 = 1e-6, 2e-6, 1e-4
    b = b_true + eta1 * rng.uniform(-1, 1, m)

    def F(x, t):
        return x + 0.1 * x**3 + eta2 * rng.uniform(-1, 1, m), eta2

    def J(x, t):
        E = rng.uniform(-1, 1, (m, m))
        E *= eta3 / np.abs(E).sum(axis=1, keepdims=True)
        return np.diag(1 + 0.3 * x**2) + E, eta3

    eps0 = 0.3
    x0 = x_star + eps0 * rng.choice([-1.0, 1.0], m)
    rep = newton_solve(SystemOracle(F, J, b, eta1), x0, SolveConfig(8, 1e-12, neighborhood_radius=eps0))
    errs = rep.errors(x_star)
    L = 0.6 * (np.abs(x_star).max() + 2 * eps0)
    inv = 1.0 + eta3  # true Jacobian has diagonal >= 1
    B = 1 + 0.3 * (np.abs(x_star).max() + 2 * eps0) ** 2
    for t in range(len(errs) - 1):
        bound = error_recursion_bound(errs[t], L, inv, eta1, eta2, eta3, B)
        assert errs[t + 1] <= bound
    floor = inv * (eta1 + eta2) + 4 * eta3 * eps0 * inv**2 * B
    assert errs[-1] <= floor + L * inv * errs[-2] ** 2


def test_recursion_bounds_reduce_to_quadratic_without_noise():
    assert error_recursion_bound(0.1, 2.0, 3.0) == pytest.approx(0.06)
    assert error_recursion_bound_chain(0.1, 2.0, 3.0) == pytest.approx(0.06)
