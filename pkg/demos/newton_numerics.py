"""
Newton iteration with a diagonal-dominance certificate
======================================================

The refinement step leans on two small numerical tools: Varah's bound on
``||A^-1||_inf`` for row diagonally dominant matrices, and a Newton loop
that refuses to step once that certificate is lost.  This script shows both
on toy problems.
"""

import numpy as np

from artifact.numerics import (
    SolveConfig,
    error_recursion_bound,
    exact_oracle,
    newton_solve,
    varah_inverse_bound,
)

# A dominant matrix: the bound is the reciprocal of the smallest row margin.
A = np.array([[4.0, 1.0, -1.0], [0.5, 3.0, 1.0], [1.0, 1.0, 5.0]])
vb = varah_inverse_bound(A)
true_norm = np.abs(np.linalg.inv(A)).sum(axis=1).max()
print(f"Varah bound {vb.bound:.4f} >= true inverse norm {true_norm:.4f}")

# Newton on F(x) = x^2 = b with b = 4 from x0 = 3.  The error roughly squares.
oracle = exact_oracle(lambda x: x**2, lambda x: np.diag(2 * x), np.array([4.0]))
rep = newton_solve(oracle, np.array([3.0]), SolveConfig(max_iterations=6, stop_tolerance=1e-14, neighborhood_radius=10.0))
for t, e in enumerate(rep.errors([2.0])):
    print(f"iteration {t}: error {e:.3e}")

# The inexact-oracle recursion: a noise floor appears once eps_t^2 is small.
eps = 0.05
for t in range(6):
    eps = error_recursion_bound(eps, L=2.0, inv_norm=1.0, eta1=1e-6, eta2=1e-6, eta3=1e-6, B=1.0)
    print(f"recursion step {t + 1}: bound {eps:.3e}")
