"""Quasi-likelihood and discrepancy functions evaluated from Q_XX.

The locally Gaussian approximation of the increment density gives

    log L(Sigma) = -(n p / 2) log(2 pi h) - (n/2) log det Sigma
                   - (n/2) tr(Sigma^-1 Q_XX),

which depends on the panel only through (n, h, Q_XX); panels are reduced
once and the sufficient statistic is the canonical input everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covstruct import ModelTemplate, build_sigma, evaluate, sigma_inner_grad, _assemble
from .errors import ShapeError, ValidationError
from .matrixcalc import chol_pd, logdet_pd
from .simulate import ObservationPanel, quadratic_variation

__all__ = [
    "QuasiData",
    "quasi_loglik",
    "discrepancy_F",
    "quasi_score",
    "grad_hess",
    "population_H",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class QuasiData:
    """Sufficient statistic of a panel: increment count, step, and Q_XX."""

    n: int
    h: float
    p: int
    q_xx: np.ndarray

    def __post_init__(self):
        if self.n < 1 or self.h <= 0:
            raise ValidationError("need n >= 1 and h > 0")
        q = np.asarray(self.q_xx, dtype=float)
        if q.shape != (self.p, self.p):
            raise ShapeError(f"q_xx must be ({self.p},{self.p}), got {q.shape}")
        if not np.array_equal(q, q.T):
            raise ShapeError("q_xx must be exactly symmetric")
        q.setflags(write=False)
        object.__setattr__(self, "q_xx", q)

    @property
    def horizon(self) -> float:
        return self.n * self.h

    @classmethod
    def from_panel(cls, panel: ObservationPanel) -> "QuasiData":
        return cls(
            n=panel.n, h=panel.h, p=panel.p, q_xx=quadratic_variation(panel)
        )


def quasi_loglik(data: QuasiData, sigma: np.ndarray) -> float:
    """Gaussian-increment quasi-log-likelihood of Sigma."""
    c = chol_pd(np.asarray(sigma, dtype=float))
    tr = float(np.trace(c.solve(data.q_xx)))
    return -0.5 * data.n * (
        data.p * (LOG_2PI + np.log(data.h)) + c.logdet + tr
    )


def discrepancy_F(data: QuasiData, sigma: np.ndarray) -> float:
    """F = log det Sigma - log det Q + tr(Sigma^-1 Q) - p; zero iff equal."""
    c = chol_pd(np.asarray(sigma, dtype=float))
    tr = float(np.trace(c.solve(data.q_xx)))
    return c.logdet - logdet_pd(data.q_xx) + tr - data.p


def _score_from_sets(template, sets, sigma_cache, q_target, scale):
    """scale * tr(dSigma_j Sigma^-1 (Q - Sigma) Sigma^-1) for all j."""
    sigma, _ = sigma_cache
    c = chol_pd(sigma)
    sigma_inv = c.solve(np.eye(template.p))
    a = c.solve(q_target)
    k = (a - np.eye(template.p)) @ sigma_inv
    k = (k + k.T) / 2.0
    return scale * sigma_inner_grad(template, sets, k)


def quasi_score(data: QuasiData, template: ModelTemplate, theta) -> np.ndarray:
    """Analytic gradient of quasi_loglik(data, Sigma(theta)) in theta."""
    theta = np.asarray(theta, dtype=float)
    sets = evaluate(template, theta)
    cache = _assemble(sets, template.p1)
    return _score_from_sets(template, sets, cache, data.q_xx, 0.5 * data.n)


def grad_hess(
    data: QuasiData, template: ModelTemplate, theta
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient plus a finite-difference Hessian of the gradient."""
    theta = np.asarray(theta, dtype=float)
    grad = quasi_score(data, template, theta)
    q = template.q
    hess = np.empty((q, q))
    for j in range(q):
        step = 1e-5 * max(1.0, abs(theta[j]))
        plus = theta.copy()
        plus[j] += step
        minus = theta.copy()
        minus[j] -= step
        col = (
            quasi_score(data, template, plus) - quasi_score(data, template, minus)
        ) / (2.0 * step)
        hess[:, j] = col
    return grad, (hess + hess.T) / 2.0


def population_H(template: ModelTemplate, theta, sigma0: np.ndarray) -> float:
    """H(theta) = -tr(Sigma(theta)^-1 Sigma0)/2 - log det Sigma(theta)/2.

    The n-free criterion whose maximizer is the optimal pseudo-parameter;
    when the template can reach Sigma0 the maximum sits there.
    """
    sigma = build_sigma(template, np.asarray(theta, dtype=float))
    c = chol_pd(sigma)
    tr = float(np.trace(c.solve(np.asarray(sigma0, dtype=float))))
    return -0.5 * tr - 0.5 * c.logdet
