"""Latent SDE simulation and panel assembly.

Four latent processes (common factors xi, unique factors delta/eps/zeta)
are stepped on the uniform grid t_i = i h; the observed panel is

    X1 = L1 xi + delta,    X2 = L2 Psi^-1 (Gamma xi + zeta) + eps.

Affine drifts of the form dx = -(A x - mu) dt + S dW get the exact Gaussian
transition (matrix-exponential construction); arbitrary drifts fall back to
Euler-Maruyama with substeps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg

from . import kernels
from .covstruct import invert_psi
from .errors import NumericalBlowup, ParseError, ShapeError, ValidationError
from .matrixcalc import chol_pd

__all__ = [
    "AffineDrift",
    "CustomDrift",
    "Process",
    "LatentSystem",
    "ObservationPanel",
    "ou_transition",
    "ou_exact_step",
    "euler_step",
    "simulate_panel",
    "quadratic_variation",
    "save_panel_csv",
    "load_panel_csv",
]

DEFAULT_SUBSTEPS = 16


def _array(x, shape_hint: str, ndim: int) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != ndim:
        raise ShapeError(f"{shape_hint} must have ndim {ndim}, got {a.ndim}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AffineDrift:
    """Drift x -> -(a x - mu); gets the exact OU transition."""

    a: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _array(self.a, "drift matrix", 2))
        object.__setattr__(self, "mu", _array(self.mu, "drift level", 1))
        d = self.mu.shape[0]
        if self.a.shape != (d, d):
            raise ShapeError(f"drift matrix {self.a.shape} vs level ({d},)")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.mu - self.a @ x


@dataclass(frozen=True, eq=False)
class CustomDrift:
    """Arbitrary (globally Lipschitz, by contract) drift; stepped by Euler."""

    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(x), dtype=float)


@dataclass(frozen=True, eq=False)
class Process:
    """One latent SDE: drift spec, diffusion matrix, initial value."""

    drift: Union[AffineDrift, CustomDrift]
    diffusion: np.ndarray
    init: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diffusion", _array(self.diffusion, "diffusion", 2))
        object.__setattr__(self, "init", _array(self.init, "init", 1))
        d = self.init.shape[0]
        if self.diffusion.shape[0] != d:
            raise ShapeError(
                f"diffusion rows {self.diffusion.shape[0]} != state dim {d}"
            )
        if isinstance(self.drift, AffineDrift) and self.drift.mu.shape[0] != d:
            raise ShapeError("drift dimension does not match init")

    @property
    def dim(self) -> int:
        return self.init.shape[0]


@dataclass(frozen=True, eq=False)
class LatentSystem:
    """True data-generating process: four latent SDEs plus the structural
    matrices mapping them to the observed panel."""

    xi: Process
    delta: Process
    eps: Process
    zeta: Process
    lambda_x1: np.ndarray
    lambda_x2: np.ndarray
    b: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("lambda_x1", "lambda_x2", "b", "gamma"):
            object.__setattr__(self, name, _array(getattr(self, name), name, 2))
        k1, k2 = self.xi.dim, self.zeta.dim
        p1, p2 = self.delta.dim, self.eps.dim
        shapes = {
            "lambda_x1": (p1, k1),
            "lambda_x2": (p2, k2),
            "b": (k2, k2),
            "gamma": (k2, k1),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ShapeError(f"{name} has shape {got}, expected {want}")
        # unique-factor diffusions must produce PD increment covariance
        for name, proc in (("delta", self.delta), ("eps", self.eps)):
            s = proc.diffusion
            try:
                chol_pd(s @ s.T)
            except Exception as exc:
                raise ValidationError(f"{name} diffusion S S' must be PD") from exc

    @property
    def k1(self) -> int:
        return self.xi.dim

    @property
    def k2(self) -> int:
        return self.zeta.dim

    @property
    def p1(self) -> int:
        return self.delta.dim

    @property
    def p2(self) -> int:
        return self.eps.dim

    @property
    def p(self) -> int:
        return self.p1 + self.p2


@dataclass(frozen=True, eq=False)
class ObservationPanel:
    """Discrete observations on the uniform grid t_i = i h, i = 0..n."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _array(self.t, "t", 1))
        object.__setattr__(self, "x", _array(self.x, "x", 2))
        if self.t.shape[0] != self.x.shape[0]:
            raise ShapeError("t and x must have the same number of rows")
        if self.t.shape[0] < 2:
            raise ValidationError("panel needs at least one increment")
        steps = np.diff(self.t)
        h = steps[0]
        if h <= 0 or np.abs(steps - h).max() > 1e-8 * h:
            raise ValidationError("observation grid must be uniform increasing")

    @property
    def n(self) -> int:
        return self.t.shape[0] - 1

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def h(self) -> float:
        return float((self.t[-1] - self.t[0]) / self.n)

    @property
    def horizon(self) -> float:
        return float(self.t[-1] - self.t[0])


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Square root L with L L' = cov for PSD cov (may be singular)."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh(cov)
        return vec * np.sqrt(np.clip(lam, 0.0, None))


def ou_transition(
    a: np.ndarray, mu: np.ndarray, s: np.ndarray, h: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact transition of dx = -(a x - mu) dt + s dW over one step h.

    Returns (phi, const, noise_l): x' = const + phi x + noise_l z with
    z standard normal. phi = expm(-a h); const = (int_0^h expm(-a u) du) mu;
    noise_l noise_l' = int_0^h expm(-a u) s s' expm(-a' u) du. The integrals
    come from block matrix exponentials, so singular a needs no special
    casing.
    """
    a = np.asarray(a, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    d = a.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -a
    block[:d, d:] = s @ s.T
    block[d:, d:] = a.T
    exp_block = scipy.linalg.expm(block * h)
    phi = exp_block[:d, :d]
    cov = exp_block[:d, d:] @ phi.T
    cov = (cov + cov.T) / 2.0

    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = -a
    aug[:d, d] = mu
    const = scipy.linalg.expm(aug * h)[:d, d]
    return phi, const, _psd_factor(cov)


def ou_exact_step(
    a: np.ndarray,
    mu: np.ndarray,
    s: np.ndarray,
    x: np.ndarray,
    h: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One draw from the exact Gaussian transition of the OU dynamics."""
    phi, const, noise_l = ou_transition(a, mu, s, h)
    x = np.asarray(x, dtype=float)
    return const + phi @ x + noise_l @ rng.standard_normal(x.shape[0])


def euler_step(
    drift: Callable[[np.ndarray], np.ndarray],
    s: np.ndarray,
    x: np.ndarray,
    h: float,
    substeps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Euler-Maruyama over one step h split into substeps."""
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float).copy()
    dt = h / substeps
    root = np.sqrt(dt)
    # overflow is detected and reported as NumericalBlowup, so the IEEE
    # warnings on the way there are suppressed
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(substeps):
            x = x + np.asarray(drift(x), dtype=float) * dt
            x = x + s @ rng.standard_normal(s.shape[1]) * root
            if not np.isfinite(x).all():
                raise NumericalBlowup(f"Euler state non-finite at substep {i}")
    return x


def _streams(rng) -> list[np.random.Generator]:
    """Four independent generators, one per latent process."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.SeedSequence(int(rng))
    if isinstance(rng, np.random.SeedSequence):
        return [np.random.default_rng(c) for c in rng.spawn(4)]
    if isinstance(rng, np.random.Generator):
        return list(rng.spawn(4))
    streams = list(rng)
    if len(streams) != 4 or not all(
        isinstance(g, np.random.Generator) for g in streams
    ):
        raise ValidationError("rng must be a seed, Generator, or 4 Generators")
    return streams


def _simulate_process(
    proc: Process,
    n: int,
    h: float,
    rng: np.random.Generator,
    substeps: int,
    scheme: str,
    label: str,
) -> np.ndarray:
    d = proc.dim
    exact = isinstance(proc.drift, AffineDrift) and scheme != "euler"
    if exact:
        phi, const, noise_l = ou_transition(
            proc.drift.a, proc.drift.mu, proc.diffusion, h
        )
        z = rng.standard_normal((n, d))
        w = z @ noise_l.T + const
        return kernels.affine_scan(phi, w, proc.init, thin=1, label=label)
    dt = h / substeps
    root = np.sqrt(dt)
    r = proc.diffusion.shape[1]
    z = rng.standard_normal((n * substeps, r))
    if isinstance(proc.drift, AffineDrift):
        phi = np.eye(d) - proc.drift.a * dt
        w = z @ (proc.diffusion.T * root) + proc.drift.mu * dt
        return kernels.affine_scan(phi, w, proc.init, thin=substeps, label=label)
    shocks = z @ (proc.diffusion.T * root)
    out = np.empty((n + 1, d))
    out[0] = proc.init
    x = proc.init.copy()
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n + 1):
            for _ in range(substeps):
                x = x + proc.drift(x) * dt + shocks[step]
                step += 1
            if not np.isfinite(x).all():
                raise NumericalBlowup(f"{label} diverged before step {step}")
            out[k] = x
    return out


def simulate_panel(
    system: LatentSystem,
    n: int,
    horizon: float,
    rng,
    substeps: int = DEFAULT_SUBSTEPS,
    scheme: str = "auto",
) -> ObservationPanel:
    """Simulate the four latent paths and assemble the observed panel.

    rng may be an integer seed, a SeedSequence, a Generator, or a sequence
    of exactly four Generators (one per latent process, in the order
    xi, delta, eps, zeta).
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    if scheme not in ("auto", "exact", "euler"):
        raise ValidationError(f"unknown scheme {scheme!r}")
    streams = _streams(rng)
    h = horizon / n
    xi = _simulate_process(system.xi, n, h, streams[0], substeps, scheme, "xi")
    delta = _simulate_process(
        system.delta, n, h, streams[1], substeps, scheme, "delta"
    )
    eps = _simulate_process(system.eps, n, h, streams[2], substeps, scheme, "eps")
    zeta = _simulate_process(
        system.zeta, n, h, streams[3], substeps, scheme, "zeta"
    )
    _, psi_inv = invert_psi(system.b)
    eta = (system.gamma @ xi.T + zeta.T).T @ psi_inv.T
    x1 = xi @ system.lambda_x1.T + delta
    x2 = eta @ system.lambda_x2.T + eps
    t = np.arange(n + 1) * h
    return ObservationPanel(t=t, x=np.hstack([x1, x2]))


def quadratic_variation(panel: ObservationPanel) -> np.ndarray:
    """Q_XX = (1/T) sum of increment outer products; symmetric PSD."""
    dx = np.diff(panel.x, axis=0)
    q = dx.T @ dx / panel.horizon
    return (q + q.T) / 2.0


def save_panel_csv(panel: ObservationPanel, path) -> None:
    """CSV with header t,x1..xp; 17 significant digits (exact round-trip)."""
    header = "t," + ",".join(f"x{i + 1}" for i in range(panel.p))
    data = np.column_stack([panel.t, panel.x])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def load_panel_csv(path) -> ObservationPanel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[0] != "t" or any(
            c != f"x{i + 1}" for i, c in enumerate(cols[1:])
        ) or len(cols) < 2:
            raise ParseError(f"{path}: bad panel header {header!r}")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if data.shape[1] != len(cols):
        raise ParseError(f"{path}: row width {data.shape[1]} != header")
    return ObservationPanel(t=data[:, 0], x=data[:, 1:])
