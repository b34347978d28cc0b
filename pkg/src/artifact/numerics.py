"""Newton's method with inexact oracles and diagonal-dominance certificates.

All vector norms are l-infinity and all matrix norms the induced
infinity-to-infinity norm (maximum absolute row sum).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, lu_factor, lu_solve


@dataclass(frozen=True)
class VarahBound:
    margin: float
    bound: float | None

    @property
    def dominant(self) -> bool:
        return self.bound is not None


def dominance_margin(A) -> float:
    """min_i (a_ii - sum_{j != i} |a_ij|)."""
    A = _square(A)
    diag = np.diag(A)
    off = np.abs(A).sum(axis=1) - np.abs(diag)
    return float(np.min(diag - off))


def varah_inverse_bound(A) -> VarahBound:
    """Certified bound on ||A^{-1}||_inf for strictly row-dominant A.

    ``bound`` is ``None`` when the matrix is not strictly dominant.
    """
    alpha = dominance_margin(A)
    return VarahBound(alpha, 1.0 / alpha if alpha > 0 else None)


def inf_operator_norm(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.abs(A).sum(axis=1).max())


def _square(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


def finite_diff_jacobian(F: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, one column per coordinate of ``x``."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cols = []
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.atleast_1d(F(x + e)) - np.atleast_1d(F(x - e))) / (2 * h))
    return np.stack(cols, axis=1)


# --------------------------------------------------------------------------
# Solver
# --------------------------------------------------------------------------

Evaluation = tuple[np.ndarray, float]


@dataclass
class SystemOracle:
    """Estimates of b, F and F' with their reported accuracies.

    ``eval_F`` and ``eval_Fprime`` take the current iterate and the iteration
    index (so Monte Carlo oracles can draw fresh samples) and return
    ``(value, eta)``.
    """

    eval_F: Callable[[np.ndarray, int], Evaluation]
    eval_Fprime: Callable[[np.ndarray, int], Evaluation]
    target_b: np.ndarray
    eta1: float = 0.0

    def __post_init__(self):
        self.target_b = np.atleast_1d(np.asarray(self.target_b, dtype=float))
        if self.eta1 < 0:
            raise ValueError("accuracies must be non-negative")


def exact_oracle(F, J, b) -> SystemOracle:
    """Wrap noiseless callables ``F(x)`` and ``J(x)``."""
    return SystemOracle(
        eval_F=lambda x, t: (np.atleast_1d(F(x)), 0.0),
        eval_Fprime=lambda x, t: (np.atleast_2d(J(x)), 0.0),
        target_b=b,
    )


@dataclass(frozen=True)
class SolveConfig:
    max_iterations: int
    stop_tolerance: float
    neighborhood_radius: float = math.inf
    require_dominance: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.stop_tolerance > 0:
            raise ValueError("stop_tolerance must be positive")
        if not self.neighborhood_radius > 0:
            raise ValueError("neighborhood_radius must be positive")


@dataclass
class SolveReport:
    x0: np.ndarray
    iterates: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    dominance_margins: list = field(default_factory=list)
    inverse_norm_bounds: list = field(default_factory=list)
    inverse_norms: list = field(default_factory=list)
    eta2: list = field(default_factory=list)
    eta3: list = field(default_factory=list)
    eta1: float = 0.0
    converged: bool = False
    status: str = "running"
    message: str = ""

    @property
    def x(self) -> np.ndarray:
        return self.iterates[-1] if self.iterates else self.x0

    @property
    def n_iterations(self) -> int:
        return len(self.iterates)

    def errors(self, x_star) -> list[float]:
        """l-inf distance to ``x_star`` for x0 and every iterate."""
        x_star = np.asarray(x_star, dtype=float)
        return [float(np.max(np.abs(x - x_star))) for x in [self.x0, *self.iterates]]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["x0"] = self.x0.tolist()
        out["iterates"] = [np.asarray(v).tolist() for v in self.iterates]
        return out


class SolveError(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def newton_solve(oracle: SystemOracle, x0, cfg: SolveConfig, *, raise_on_failure: bool = True) -> SolveReport:
    """Iterate ``x <- x + F'(x)^{-1} (b - F(x))`` using the oracle's estimates.

    Stops after ``cfg.max_iterations`` steps or once a step is shorter than
    ``stop_tolerance / 2``.  A singular Jacobian estimate, a non-dominant one
    (unless ``cfg.require_dominance`` is off), or
    an iterate leaving the ``2 * neighborhood_radius`` ball around ``x0``,
    halts the solve; with ``raise_on_failure`` a :class:`SolveError`
    carrying the partial report is raised.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    b = oracle.target_b
    rep = SolveReport(x0=x0.copy(), eta1=float(oracle.eta1))
    x = x0.copy()

    def halt(status: str, message: str) -> SolveReport:
        rep.status, rep.message = status, message
        if raise_on_failure:
            raise SolveError(message, rep)
        return rep

    for t in range(cfg.max_iterations):
        Fx, eta2 = oracle.eval_F(x, t)
        J, eta3 = oracle.eval_Fprime(x, t)
        vb = varah_inverse_bound(J)
        if cfg.require_dominance and not vb.dominant:
            return halt("not_dominant", f"Jacobian estimate not diagonally dominant at iteration {t} (margin {vb.margin:.3g})")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                lu = lu_factor(J, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            return halt("singular", f"Jacobian factorization failed at iteration {t}: {exc}")
        if np.any(np.diag(lu[0]) == 0):
            return halt("singular", f"Jacobian estimate singular at iteration {t}")
        r = b - Fx
        step = lu_solve(lu, r)
        x = x + step
        rep.iterates.append(x.copy())
        rep.step_norms.append(float(np.max(np.abs(step))))
        rep.residual_norms.append(float(np.max(np.abs(r))))
        rep.dominance_margins.append(vb.margin)
        rep.inverse_norm_bounds.append(vb.bound)
        rep.inverse_norms.append(inf_operator_norm(lu_solve(lu, np.eye(J.shape[0]))))
        rep.eta2.append(float(eta2))
        rep.eta3.append(float(eta3))
        if np.max(np.abs(x - x0)) > 2 * cfg.neighborhood_radius:
            return halt("out_of_neighborhood", f"iterate {t + 1} left the 2*eps0 ball around x0")
        if rep.step_norms[-1] < cfg.stop_tolerance / 2:
            rep.converged = True
            rep.status = "converged"
            return rep
    rep.status = "max_iterations"
    rep.converged = False
    return rep


def error_recursion_bound(eps_t, L, inv_norm, eta1=0.0, eta2=0.0, eta3=0.0, B=0.0) -> float:
    """Next-step error bound eps^2 L ||J^-1|| + ||J^-1|| (eta1 + eta2 + 4 eta3 eps ||J^-1|| B)."""
    return eps_t**2 * L * inv_norm + inv_norm * (eta1 + eta2 + 4 * eta3 * eps_t * inv_norm * B)


def error_recursion_bound_chain(eps_t, L, inv_norm, eta1=0.0, eta2=0.0, eta3=0.0, B=0.0) -> float:
    """Same recursion with the perturbation term kept in its unsimplified form.

    2 eta3 ||J^-1||^2 (eta1 + eta2 + B eps) replaces 4 eta3 eps ||J^-1||^2 B.
    """
    return (
        eps_t**2 * L * inv_norm
        + 2 * eta3 * inv_norm**2 * (eta1 + eta2 + B * eps_t)
        + inv_norm * (eta1 + eta2)
    )
