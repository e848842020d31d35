"""Box-constrained quasi-Newton minimizer.

BFGS-class search with box projection, an active-set direction mask,
backtracking Armijo line search, and feasibility backtracking: objective
evaluations may raise numerical errors (non-PD covariance, singular
structural part) and such trial points are rejected without being
treated as values. Written by hand because the fit contract requires
infeasible iterates to be backtracked, all runs to be deterministic,
and the projected-gradient stopping rule to be explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError

__all__ = ["OptRun", "minimize_box"]

ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 60
CURVATURE_FLOOR = 1e-10


@dataclass
class OptRun:
    """Outcome of one minimization run."""

    x: np.ndarray
    f: float
    grad: np.ndarray
    pg_norm: float
    iterations: int
    converged: bool
    boundary_hit: bool
    rejections: int


def _projected_gradient_norm(x, g, lower, upper) -> float:
    return float(np.abs(x - np.clip(x - g, lower, upper)).max())


def minimize_box(
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_iters: int,
    gtol: float,
) -> Optional[OptRun]:
    """Minimize fg over the box; None when the start itself is infeasible.

    fg returns (value, gradient) and may raise NumericalError for
    infeasible points; those are only ever hit on trial steps, which are
    then shortened. Coordinates pressed against a bound by the gradient
    are frozen out of the quasi-Newton direction; when that active set
    changes, only the flipped coordinates' curvature rows are rebuilt,
    which keeps the search fast when an optimum sits on the boundary.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    try:
        f, g = fg(x)
    except NumericalError:
        return None
    if not np.isfinite(f) or not np.isfinite(g).all():
        return None

    q = x.shape[0]
    identity = np.eye(q)
    h_inv = identity.copy()
    steepest = True  # h_inv currently carries no curvature information
    fresh = True  # next curvature pair should rescale h_inv first
    prev_active = None
    rejections = 0
    converged = False
    iterations = 0

    for iterations in range(max_iters):
        pg_norm = _projected_gradient_norm(x, g, lower, upper)
        if pg_norm <= gtol:
            converged = True
            break

        active = ((x <= lower) & (g > 0.0)) | ((x >= upper) & (g < 0.0))
        if prev_active is not None and not np.array_equal(active, prev_active):
            # Membership flips invalidate only the flipped coordinates'
            # curvature rows; curvature among the persistently free block
            # is kept (a full reset degrades to steepest descent whenever
            # an optimum sits on the boundary).
            changed = active != prev_active
            keep = ~changed & ~active
            if keep.any():
                scale = float(np.median(np.diag(h_inv)[keep]))
                if not np.isfinite(scale) or scale <= 0.0:
                    scale = 1.0
            else:
                scale = 1.0
            h_inv[changed, :] = 0.0
            h_inv[:, changed] = 0.0
            h_inv[changed, changed] = scale
        prev_active = active
        free = ~active

        d = np.zeros(q)
        d[free] = -(h_inv[np.ix_(free, free)] @ g[free])
        slope = float(d @ g)
        if slope >= -1e-14 * float(np.linalg.norm(d) * np.linalg.norm(g)):
            h_inv = identity.copy()
            steepest = True
            fresh = True
            d = np.where(free, -g, 0.0)

        alpha = 1.0
        accepted = False
        xt = ft = gt = None
        for _ in range(MAX_BACKTRACKS):
            xt = np.clip(x + alpha * d, lower, upper)
            s = xt - x
            if np.abs(s).max() == 0.0:
                break
            gs = float(g @ s)
            if gs > 0.0:  # projection destroyed the descent direction
                alpha *= 0.5
                continue
            try:
                ft, gt = fg(xt)
            except NumericalError:
                rejections += 1
                alpha *= 0.5
                continue
            if not np.isfinite(ft) or not np.isfinite(gt).all():
                rejections += 1
                alpha *= 0.5
                continue
            if ft <= f + ARMIJO_C1 * gs:
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            if steepest:
                break  # stalled even along the (masked) gradient
            h_inv = identity.copy()
            steepest = True
            fresh = True
            continue

        # Curvature is learned on the free subspace only; gradient changes
        # along clipped coordinates would otherwise leak into cross terms
        # that go stale the moment the active set moves.
        s = np.where(free, xt - x, 0.0)
        y = np.where(free, gt - g, 0.0)
        sy = float(s @ y)
        if sy > CURVATURE_FLOOR * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if fresh:
                # Shanno-Phua sizing of the seed matrix; without it the
                # unit metric can be off by orders of magnitude and the
                # first steps collapse to tiny backtracked moves.
                h_inv = (sy / float(y @ y)) * identity
                fresh = False
            rho = 1.0 / sy
            v = identity - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)
            steepest = False
        x, f, g = xt, ft, gt
    else:
        iterations = max_iters

    pg_norm = _projected_gradient_norm(x, g, lower, upper)
    if pg_norm <= gtol:
        converged = True
    boundary_hit = bool(np.any((x == lower) | (x == upper)))
    return OptRun(
        x=x,
        f=f,
        grad=g,
        pg_norm=pg_norm,
        iterations=iterations,
        converged=converged,
        boundary_hit=boundary_hit,
        rejections=rejections,
    )
