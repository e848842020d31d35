"""Small dense matrix utilities for the covariance algebra.

Half-vectorization uses column-major lower-triangle ordering throughout the
package; every Jacobian downstream is expressed in the same ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, ShapeError, ValidationError

__all__ = [
    "vech",
    "unvech",
    "tril_pairs",
    "DupPair",
    "duplication",
    "CholFactor",
    "chol_pd",
    "logdet_pd",
    "solve_pd",
]

# Cholesky pivot below this fraction of the largest diagonal entry counts as
# a failure; templates can approach singularity at box boundaries.
PIVOT_RTOL = 1e-12


def _as_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    return a


@lru_cache(maxsize=None)
def tril_pairs(p: int) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of the lower triangle in column-major (vech) order."""
    rows = np.concatenate([np.arange(j, p) for j in range(p)])
    cols = np.concatenate([np.full(p - j, j) for j in range(p)])
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def vech(a: np.ndarray) -> np.ndarray:
    """Stack the lower triangle of a symmetric matrix column by column."""
    a = _as_square(a)
    if not np.array_equal(a, a.T):
        raise ShapeError("vech requires an exactly symmetric matrix")
    rows, cols = tril_pairs(a.shape[0])
    return a[rows, cols].copy()


def unvech(v: np.ndarray) -> np.ndarray:
    """Inverse of vech: rebuild the full symmetric matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError("unvech expects a vector")
    pbar = v.shape[0]
    p = int(round((np.sqrt(8 * pbar + 1) - 1) / 2))
    if p * (p + 1) // 2 != pbar:
        raise ShapeError(f"length {pbar} is not a triangular number")
    rows, cols = tril_pairs(p)
    a = np.zeros((p, p))
    a[rows, cols] = v
    a[cols, rows] = v
    return a


@dataclass(frozen=True)
class DupPair:
    """Duplication matrix D (p^2 x pbar) and its Moore-Penrose inverse."""

    dim: int
    d: np.ndarray
    d_plus: np.ndarray


@lru_cache(maxsize=None)
def duplication(p: int) -> DupPair:
    """D with vec(A) = D vech(A) for symmetric A, and Dplus = (D'D)^-1 D'."""
    if p < 1:
        raise ValidationError(f"duplication requires p >= 1, got {p}")
    pbar = p * (p + 1) // 2
    rows, cols = tril_pairs(p)
    d = np.zeros((p * p, pbar))
    m = np.arange(pbar)
    # vec index of entry (i, j) in column-major layout is i + j*p
    d[rows + cols * p, m] = 1.0
    d[cols + rows * p, m] = 1.0
    # D'D is diagonal: 1 for diagonal cells, 2 for off-diagonal cells
    counts = np.where(rows == cols, 1.0, 2.0)
    d_plus = d.T / counts[:, None]
    d.setflags(write=False)
    d_plus.setflags(write=False)
    return DupPair(dim=p, d=d, d_plus=d_plus)


class CholFactor:
    """Lower Cholesky factor with the solves the quasi-likelihood needs."""

    def __init__(self, lower: np.ndarray):
        self.lower = lower

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return scipy.linalg.cho_solve((self.lower, True), b, check_finite=False)


def chol_pd(a: np.ndarray) -> CholFactor:
    """Cholesky of a symmetric PD matrix with an explicit pivot tolerance."""
    a = _as_square(a)
    if a.shape[0] == 0:  # vacuously PD, logdet 0
        return CholFactor(np.empty((0, 0)))
    diag = np.diag(a)
    max_diag = float(diag.max(initial=0.0))
    if max_diag <= 0.0 or not np.isfinite(a).all():
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    # pivots are the squared Cholesky diagonal entries
    pivots = np.diag(lower) ** 2
    if np.any(pivots < PIVOT_RTOL * max_diag):
        raise NotPositiveDefinite(
            f"pivot below {PIVOT_RTOL:g} of the largest diagonal entry"
        )
    return CholFactor(lower)


def logdet_pd(a: np.ndarray) -> float:
    """Log determinant of a symmetric PD matrix via Cholesky."""
    return chol_pd(a).logdet


def solve_pd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """A^-1 B for symmetric PD A without forming the inverse."""
    return chol_pd(a).solve(b)
