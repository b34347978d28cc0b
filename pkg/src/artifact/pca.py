"""Projection of samples onto the top-k singular subspace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import SampleBatch


@dataclass(frozen=True, eq=False)
class ProjectionReport:
    basis: np.ndarray  # d x k', orthonormal columns, k' = min(d, k)
    projected_samples: np.ndarray
    singular_values: np.ndarray
    projected_means_hint: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @property
    def d(self) -> int:
        return self.basis.shape[0]


def second_moment(points: np.ndarray, chunk: int = 1 << 16) -> np.ndarray:
    """Uncentered X X^T / N, accumulated in fixed-size chunks."""
    n, d = points.shape
    acc = np.zeros((d, d))
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        acc += block.T @ block
    return acc / n


def reduce(samples: SampleBatch | np.ndarray, k: int, true_means=None) -> ProjectionReport:
    """Top-k left singular subspace of the d x N sample matrix.

    No centering is applied.  When ``d <= k`` the identity basis is returned.
    ``true_means`` (k x d), if given, are projected for diagnostics.
    """
    pts = samples.points if isinstance(samples, SampleBatch) else np.asarray(samples, dtype=float)
    n, d = pts.shape
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    A = second_moment(pts)
    evals, evecs = np.linalg.eigh(A)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    sv = np.sqrt(np.clip(evals[: min(d, n)], 0.0, None))
    if d <= k:
        basis = np.eye(d)
    else:
        basis = evecs[:, :k]
        # Fix column signs so the largest-magnitude entry is positive.
        idx = np.argmax(np.abs(basis), axis=0)
        basis = basis * np.sign(basis[idx, np.arange(basis.shape[1])])
    hint = None
    if true_means is not None:
        hint = np.atleast_2d(np.asarray(true_means, dtype=float)) @ basis
    return ProjectionReport(basis, pts @ basis, sv, hint)


def project(report: ProjectionReport, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != report.d:
        raise ValueError(f"expected vectors of dimension {report.d}")
    return x @ report.basis


def lift(report: ProjectionReport, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != report.k:
        raise ValueError(f"expected vectors of dimension {report.k}")
    return y @ report.basis.T


def projection_errors(report: ProjectionReport, means) -> np.ndarray:
    """||mu_i - P mu_i|| for each true mean."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    return np.linalg.norm(means - lift(report, project(report, means)), axis=1)
