"""Parametric SEM covariance structure.

A ModelTemplate maps a parameter vector theta to eight structural matrices
through pattern matrices (fixed cells and free cells indexed into theta),
and assembles the increment covariance

    Sigma = [[S11, S12], [S12', S22]],
    S11 = L1 Sxx L1' + Sdd,
    S12 = L1 Sxx G' Psi^-T L2',
    S22 = L2 Psi^-1 (G Sxx G' + Szz) Psi^-T L2' + See,   Psi = I - B.

Also provides the Jacobian of vech Sigma, the weight matrix
W = 2 Dplus (Sigma (x) Sigma) Dplus', the information Delta' W^-1 Delta,
and an identifiability diagnostic.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from .errors import (
    NotPositiveDefinite,
    ParseError,
    ShapeError,
    SingularPsi,
    ValidationError,
)
from .matrixcalc import chol_pd, duplication, logdet_pd, solve_pd, vech

__all__ = [
    "Free",
    "PatternMatrix",
    "ModelTemplate",
    "StructuralSet",
    "evaluate",
    "build_sigma",
    "sigma_jacobian",
    "sigma_inner_grad",
    "weight_matrix",
    "fisher_info",
    "numeric_rank",
    "IdentifiabilityReport",
    "identifiability_report",
    "template_to_obj",
    "template_from_obj",
    "save_template",
    "load_template",
]

# relative eigenvalue floor below which a PSD check fails
_PSD_RTOL = 1e-10
# singular values below this fraction of the largest count as zero
RANK_RTOL = 1e-8


@dataclass(frozen=True)
class Free:
    """Cell bound to parameter theta[index]."""

    index: int


Cell = Union[float, int, Free, str]


def _parse_cell(cell: Cell) -> tuple[float, int]:
    """(fixed_value, param_index); param_index -1 means fixed."""
    if isinstance(cell, Free):
        return 0.0, int(cell.index)
    if isinstance(cell, str):
        if not cell.startswith("t"):
            raise ValidationError(f"bad cell spec {cell!r}; expected 't<i>'")
        try:
            return 0.0, int(cell[1:])
        except ValueError as exc:
            raise ValidationError(f"bad cell spec {cell!r}") from exc
    if isinstance(cell, bool) or not isinstance(cell, (int, float)):
        raise ValidationError(f"bad cell {cell!r}")
    return float(cell), -1


class PatternMatrix:
    """Matrix of Fixed(value) / Free(index) cells.

    Degenerate shapes (zero rows or columns) are legal so templates can
    omit a whole block; they need an explicit `shape` because the cell
    grid alone cannot carry both dimensions.
    """

    def __init__(self, cells: Sequence[Sequence[Cell]], shape=None):
        rows = len(cells)
        cols = len(cells[0]) if rows else 0
        if shape is not None and (rows == 0 or cols == 0):
            rows, cols = int(shape[0]), int(shape[1])
            if rows and cols:
                raise ShapeError("explicit shape is for empty grids only")
            if len(cells) not in (0, rows):
                raise ShapeError(f"cell grid does not match shape {shape}")
        elif rows == 0 or len({len(r) for r in cells}) != 1 or cols == 0:
            raise ShapeError("pattern needs a nonempty rectangular cell grid")
        self.values = np.zeros((rows, cols))
        self.indices = np.full((rows, cols), -1, dtype=np.intp)
        for i, row in enumerate(cells):
            for j, cell in enumerate(row):
                self.values[i, j], self.indices[i, j] = _parse_cell(cell)
        self.values.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def empty(cls, rows: int, cols: int) -> "PatternMatrix":
        return cls([], shape=(rows, cols))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def materialize(self, theta: np.ndarray) -> np.ndarray:
        out = self.values.copy()
        mask = self.indices >= 0
        out[mask] = theta[self.indices[mask]]
        return out

    def is_symmetric_pattern(self) -> bool:
        return np.array_equal(self.values, self.values.T) and np.array_equal(
            self.indices, self.indices.T
        )

    def free_cells(self) -> list[tuple[int, int, int]]:
        """(row, col, param_index) for every free cell."""
        rr, cc = np.nonzero(self.indices >= 0)
        return [(int(i), int(j), int(self.indices[i, j])) for i, j in zip(rr, cc)]

    def to_cells(self) -> list[list[Cell]]:
        out: list[list[Cell]] = []
        for i in range(self.shape[0]):
            row: list[Cell] = []
            for j in range(self.shape[1]):
                k = self.indices[i, j]
                row.append(f"t{k}" if k >= 0 else float(self.values[i, j]))
            out.append(row)
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PatternMatrix)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.indices.tobytes()))


_SLOT_NAMES = (
    "lambda_x1",
    "lambda_x2",
    "b",
    "gamma",
    "sigma_xixi",
    "sigma_dd",
    "sigma_ee",
    "sigma_zz",
)


@dataclass(frozen=True, eq=False)
class ModelTemplate:
    """One candidate model: pattern matrices, dimensions, parameter box."""

    q: int
    p1: int
    p2: int
    k1: int
    k2: int
    lambda_x1: PatternMatrix
    lambda_x2: PatternMatrix
    b: PatternMatrix
    gamma: PatternMatrix
    sigma_xixi: PatternMatrix
    sigma_dd: PatternMatrix
    sigma_ee: PatternMatrix
    sigma_zz: PatternMatrix
    bounds: np.ndarray
    # free-cell lists per slot, precomputed for Jacobian/adjoint passes
    cells: dict = field(init=False, repr=False)

    def __post_init__(self):
        problems: list[str] = []
        expected = {
            "lambda_x1": (self.p1, self.k1),
            "lambda_x2": (self.p2, self.k2),
            "b": (self.k2, self.k2),
            "gamma": (self.k2, self.k1),
            "sigma_xixi": (self.k1, self.k1),
            "sigma_dd": (self.p1, self.p1),
            "sigma_ee": (self.p2, self.p2),
            "sigma_zz": (self.k2, self.k2),
        }
        for name, shape in expected.items():
            pat = getattr(self, name)
            if not isinstance(pat, PatternMatrix):
                problems.append(f"{name} is not a PatternMatrix")
            elif pat.shape != shape:
                problems.append(f"{name} has shape {pat.shape}, expected {shape}")
        if not problems:
            diag = np.arange(self.k2)
            if np.any(self.b.indices[diag, diag] >= 0) or np.any(
                self.b.values[diag, diag] != 0.0
            ):
                problems.append("b must have Fixed(0) on its diagonal")
            for name in ("sigma_xixi", "sigma_dd", "sigma_ee", "sigma_zz"):
                if not getattr(self, name).is_symmetric_pattern():
                    problems.append(f"{name} must be symmetric as a pattern")
            used = np.concatenate(
                [getattr(self, n).indices.ravel() for n in _SLOT_NAMES]
            )
            used = used[used >= 0]
            if used.size and used.max() >= self.q:
                problems.append(f"parameter index {used.max()} >= q={self.q}")
            missing = sorted(set(range(self.q)) - set(used.tolist()))
            if missing:
                problems.append(f"unused parameter indices {missing}")
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.shape != (self.q, 2):
            problems.append(f"bounds must be ({self.q},2), got {bounds.shape}")
        elif not (
            np.isfinite(bounds).all() and np.all(bounds[:, 0] < bounds[:, 1])
        ):
            problems.append("bounds must be finite with lo < hi")
        if problems:
            raise ValidationError("; ".join(problems))
        bounds.setflags(write=False)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(
            self,
            "cells",
            {name: getattr(self, name).free_cells() for name in _SLOT_NAMES},
        )

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def pbar(self) -> int:
        return self.p * (self.p + 1) // 2

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(
            np.all(theta >= self.bounds[:, 0]) and np.all(theta <= self.bounds[:, 1])
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelTemplate):
            return False
        dims = ("q", "p1", "p2", "k1", "k2")
        return (
            all(getattr(self, d) == getattr(other, d) for d in dims)
            and all(
                getattr(self, n) == getattr(other, n) for n in _SLOT_NAMES
            )
            and np.array_equal(self.bounds, other.bounds)
        )


@dataclass(frozen=True, eq=False)
class StructuralSet:
    """The eight matrices at a concrete theta, plus Psi = I - B."""

    lambda_x1: np.ndarray
    lambda_x2: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    sigma_xixi: np.ndarray
    sigma_dd: np.ndarray
    sigma_ee: np.ndarray
    sigma_zz: np.ndarray
    psi: np.ndarray
    psi_inv: np.ndarray


def _check_theta(template: ModelTemplate, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (template.q,):
        raise ShapeError(f"theta must have length {template.q}, got {theta.shape}")
    return theta


def invert_psi(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Psi, Psi^-1) for Psi = I - B; SingularPsi when not invertible."""
    k2 = b.shape[0]
    psi = np.eye(k2) - b
    with warnings.catch_warnings():
        # singularity is detected from the pivots below and reported as
        # SingularPsi; scipy's advisory warning would just be noise
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(psi, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min(initial=np.inf) <= 1e-12 * max(1.0, pivots.max(initial=0.0)):
        raise SingularPsi("I - B is singular within tolerance")
    psi_inv = scipy.linalg.lu_solve((lu, piv), np.eye(k2), check_finite=False)
    return psi, psi_inv


def _check_psd(a: np.ndarray, name: str) -> None:
    eigs = np.linalg.eigvalsh(a)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if eigs.min(initial=0.0) < -_PSD_RTOL * scale:
        raise NotPositiveDefinite(f"{name} is not positive semidefinite")


def evaluate(template: ModelTemplate, theta: np.ndarray) -> StructuralSet:
    """Materialize the eight structural matrices at theta.

    Box membership is a precondition, not enforced here (derivative probes
    step slightly outside the box on purpose).
    """
    theta = _check_theta(template, theta)
    mats = {name: getattr(template, name).materialize(theta) for name in _SLOT_NAMES}
    psi, psi_inv = invert_psi(mats["b"])
    # unique-factor variances must be PD, common-factor ones PSD
    chol_pd(mats["sigma_dd"])
    chol_pd(mats["sigma_ee"])
    _check_psd(mats["sigma_xixi"], "sigma_xixi")
    _check_psd(mats["sigma_zz"], "sigma_zz")
    return StructuralSet(psi=psi, psi_inv=psi_inv, **mats)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def _assemble(sets: StructuralSet, p1: int) -> tuple[np.ndarray, dict]:
    l1, l2 = sets.lambda_x1, sets.lambda_x2
    sxx, g = sets.sigma_xixi, sets.gamma
    r = l2 @ sets.psi_inv
    a1 = l1 @ sxx
    m = _symmetrize(g @ sxx @ g.T + sets.sigma_zz)
    s11 = _symmetrize(a1 @ l1.T + sets.sigma_dd)
    s12 = a1 @ g.T @ r.T
    s22 = _symmetrize(r @ m @ r.T + sets.sigma_ee)
    p = s11.shape[0] + s22.shape[0]
    sigma = np.empty((p, p))
    sigma[:p1, :p1] = s11
    sigma[:p1, p1:] = s12
    sigma[p1:, :p1] = s12.T
    sigma[p1:, p1:] = s22
    cache = {"r": r, "a1": a1, "m": m}
    return sigma, cache


def build_sigma(template: ModelTemplate, theta: np.ndarray) -> np.ndarray:
    """Assemble the p x p increment covariance Sigma(theta)."""
    sets = evaluate(template, theta)
    sigma, _ = _assemble(sets, template.p1)
    return sigma


def _zero_slots(template: ModelTemplate) -> dict[str, np.ndarray]:
    return {
        name: np.zeros(getattr(template, name).shape) for name in _SLOT_NAMES
    }


def _assemble_derivative(
    sets: StructuralSet, cache: dict, d: dict[str, np.ndarray], p1: int
) -> np.ndarray:
    """Product rule through the block formulas for one parameter."""
    l1, l2 = sets.lambda_x1, sets.lambda_x2
    sxx, g = sets.sigma_xixi, sets.gamma
    p_inv = sets.psi_inv
    r, a1, m = cache["r"], cache["a1"], cache["m"]

    d_pinv = p_inv @ d["b"] @ p_inv  # dPsi = -dB
    d_r = d["lambda_x2"] @ p_inv + l2 @ d_pinv

    u = d["lambda_x1"] @ a1.T  # dL1 Sxx L1'
    d_s11 = _symmetrize(u + u.T + l1 @ d["sigma_xixi"] @ l1.T + d["sigma_dd"])

    gr = g.T @ r.T
    d_s12 = (
        d["lambda_x1"] @ sxx @ gr
        + l1 @ d["sigma_xixi"] @ gr
        + a1 @ d["gamma"].T @ r.T
        + a1 @ g.T @ d_r.T
    )

    v = d["gamma"] @ sxx @ g.T
    d_m = v + v.T + g @ d["sigma_xixi"] @ g.T + d["sigma_zz"]
    w = d_r @ m @ r.T
    d_s22 = _symmetrize(w + w.T + r @ d_m @ r.T + d["sigma_ee"])

    p = d_s11.shape[0] + d_s22.shape[0]
    out = np.empty((p, p))
    out[:p1, :p1] = d_s11
    out[:p1, p1:] = d_s12
    out[p1:, :p1] = d_s12.T
    out[p1:, p1:] = d_s22
    return out


def sigma_jacobian(template: ModelTemplate, theta: np.ndarray) -> np.ndarray:
    """Delta(theta): column j is d vech Sigma / d theta_j, analytic."""
    sets = evaluate(template, theta)
    _, cache = _assemble(sets, template.p1)
    jac = np.zeros((template.pbar, template.q))
    d = _zero_slots(template)
    # group free cells by parameter index
    by_param: list[list[tuple[str, int, int]]] = [[] for _ in range(template.q)]
    for name in _SLOT_NAMES:
        for i, j, k in template.cells[name]:
            by_param[k].append((name, i, j))
    for k, touched in enumerate(by_param):
        for name, i, j in touched:
            d[name][i, j] = 1.0
        jac[:, k] = vech(_assemble_derivative(sets, cache, d, template.p1))
        for name, i, j in touched:
            d[name][i, j] = 0.0
    return jac


def sigma_inner_grad(
    template: ModelTemplate, sets: StructuralSet, k_mat: np.ndarray
) -> np.ndarray:
    """Vector with entries tr(dSigma_j K) for symmetric K, via adjoints.

    Equals sigma_jacobian(...)' D' vec K but costs a fixed small number of
    matrix products independent of q; this is the optimizer's hot path.
    """
    p1 = template.p1
    l1, l2 = sets.lambda_x1, sets.lambda_x2
    sxx, g = sets.sigma_xixi, sets.gamma
    p_inv = sets.psi_inv
    r = l2 @ p_inv
    m = g @ sxx @ g.T + sets.sigma_zz

    k11 = k_mat[:p1, :p1]
    k12 = k_mat[:p1, p1:]
    k22 = k_mat[p1:, p1:]

    q_tilde = r.T @ k22 @ r
    rg = r @ g
    a_l1 = 2.0 * (k11 @ l1 @ sxx + k12 @ rg @ sxx)
    a_xx = l1.T @ k11 @ l1 + 2.0 * l1.T @ k12 @ rg + g.T @ q_tilde @ g
    a_g = 2.0 * (r.T @ k12.T @ l1 @ sxx + q_tilde @ g @ sxx)
    a_r = 2.0 * (k12.T @ l1 @ sxx @ g.T + k22 @ r @ m)
    a_l2 = a_r @ p_inv.T
    a_b = r.T @ a_r @ p_inv.T
    adjoints = {
        "lambda_x1": a_l1,
        "lambda_x2": a_l2,
        "b": a_b,
        "gamma": a_g,
        "sigma_xixi": a_xx,
        "sigma_dd": k11,
        "sigma_ee": k22,
        "sigma_zz": q_tilde,
    }
    grad = np.zeros(template.q)
    for name, adj in adjoints.items():
        for i, j, k in template.cells[name]:
            grad[k] += adj[i, j]
    return grad


def weight_matrix(sigma: np.ndarray) -> np.ndarray:
    """W = 2 Dplus (Sigma kron Sigma) Dplus', the asymptotic weight."""
    sigma = np.asarray(sigma, dtype=float)
    chol_pd(sigma)  # reject non-PD input
    dp = duplication(sigma.shape[0]).d_plus
    w = 2.0 * dp @ np.kron(sigma, sigma) @ dp.T
    return _symmetrize(w)


def fisher_info(template: ModelTemplate, theta: np.ndarray) -> np.ndarray:
    """I(theta) = Delta' W^-1 Delta; PD exactly when Delta has full rank."""
    sigma = build_sigma(template, theta)
    delta = sigma_jacobian(template, theta)
    w = weight_matrix(sigma)
    return _symmetrize(delta.T @ solve_pd(w, delta))


def numeric_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True)
class IdentifiabilityReport:
    rank: int
    q: int
    singular_values: np.ndarray
    chi: float
    chi_argmin: np.ndarray
    y_max: float
    n_grid: int
    n_infeasible: int

    def to_obj(self) -> dict:
        return {
            "rank": self.rank,
            "q": self.q,
            "singular_values": [float(s) for s in self.singular_values],
            "chi": self.chi,
            "chi_argmin": [float(v) for v in self.chi_argmin],
            "y_max": self.y_max,
            "n_grid": self.n_grid,
            "n_infeasible": self.n_infeasible,
        }


def _y_gap(template, theta, sigma0, logdet0, p) -> float:
    """Y(theta) = H(theta) - H(theta0) against the reference covariance."""
    sigma = build_sigma(template, theta)
    c = chol_pd(sigma)
    tr = float(np.trace(c.solve(sigma0)))
    return -0.5 * (tr - p) - 0.5 * (c.logdet - logdet0)


def identifiability_report(
    template: ModelTemplate,
    theta0: np.ndarray,
    grid: Union[int, np.ndarray] = 1000,
    seed: int = 0,
) -> IdentifiabilityReport:
    """Empirical identifiability around theta0.

    Evaluates Y(theta) = H(theta) - H(theta0) over a sample of the box and
    reports the smallest -Y/|theta-theta0|^2 (empirical quadratic-gap
    constant) plus the numeric rank of the Jacobian at theta0. Grid points
    where Sigma fails to be PD are counted, not raised.
    """
    theta0 = _check_theta(template, theta0)
    if isinstance(grid, (int, np.integer)):
        rng = np.random.default_rng(seed)
        lo, hi = template.bounds[:, 0], template.bounds[:, 1]
        pts = rng.uniform(lo, hi, size=(int(grid), template.q))
    else:
        pts = np.asarray(grid, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != template.q:
            raise ShapeError(f"grid must be (g,{template.q}), got {pts.shape}")

    delta = sigma_jacobian(template, theta0)
    sv = np.linalg.svd(delta, compute_uv=False)
    rank = numeric_rank(delta)

    sigma0 = build_sigma(template, theta0)
    logdet0 = chol_pd(sigma0).logdet
    p = template.p

    chi = np.inf
    argmin = theta0
    y_max = -np.inf
    infeasible = 0
    for theta in pts:
        dist2 = float(np.sum((theta - theta0) ** 2))
        if dist2 < 1e-24:
            continue
        try:
            y = _y_gap(template, theta, sigma0, logdet0, p)
        except (NotPositiveDefinite, SingularPsi):
            infeasible += 1
            continue
        y_max = max(y_max, y)
        ratio = -y / dist2
        if ratio < chi:
            chi = ratio
            argmin = theta.copy()
    return IdentifiabilityReport(
        rank=rank,
        q=template.q,
        singular_values=sv,
        chi=float(chi),
        chi_argmin=argmin,
        y_max=float(y_max),
        n_grid=int(pts.shape[0]),
        n_infeasible=infeasible,
    )


# --- template JSON interface -------------------------------------------------

_TEMPLATE_KEYS = {"p1", "p2", "k1", "k2", "q", "matrices", "bounds"}


def template_to_obj(template: ModelTemplate) -> dict:
    return {
        "p1": template.p1,
        "p2": template.p2,
        "k1": template.k1,
        "k2": template.k2,
        "q": template.q,
        "matrices": {
            name: getattr(template, name).to_cells() for name in _SLOT_NAMES
        },
        "bounds": [[float(lo), float(hi)] for lo, hi in template.bounds],
    }


def template_from_obj(obj: dict) -> ModelTemplate:
    if not isinstance(obj, dict):
        raise ValidationError("template spec must be a JSON object")
    unknown = sorted(set(obj) - _TEMPLATE_KEYS)
    if unknown:
        raise ValidationError(f"unknown template fields {unknown}")
    missing = sorted(_TEMPLATE_KEYS - set(obj))
    if missing:
        raise ValidationError(f"missing template fields {missing}")
    mats = obj["matrices"]
    if not isinstance(mats, dict):
        raise ValidationError("matrices must be an object")
    unknown = sorted(set(mats) - set(_SLOT_NAMES))
    if unknown:
        raise ValidationError(f"unknown matrices {unknown}")
    missing = sorted(set(_SLOT_NAMES) - set(mats))
    if missing:
        raise ValidationError(f"missing matrices {missing}")
    dims = {k: obj[k] for k in ("p1", "p2", "k1", "k2")}
    expected = {
        "lambda_x1": (dims["p1"], dims["k1"]),
        "lambda_x2": (dims["p2"], dims["k2"]),
        "b": (dims["k2"], dims["k2"]),
        "gamma": (dims["k2"], dims["k1"]),
        "sigma_xixi": (dims["k1"], dims["k1"]),
        "sigma_dd": (dims["p1"], dims["p1"]),
        "sigma_ee": (dims["p2"], dims["p2"]),
        "sigma_zz": (dims["k2"], dims["k2"]),
    }
    patterns = {}
    for name in _SLOT_NAMES:
        shape = expected[name]
        # cell grids cannot carry both dimensions when a block is empty,
        # so pass the expected shape through for those
        if 0 in shape:
            patterns[name] = PatternMatrix(mats[name], shape=shape)
        else:
            patterns[name] = PatternMatrix(mats[name])
    return ModelTemplate(
        q=obj["q"],
        p1=obj["p1"],
        p2=obj["p2"],
        k1=obj["k1"],
        k2=obj["k2"],
        bounds=np.asarray(obj["bounds"], dtype=float),
        **patterns,
    )


def save_template(template: ModelTemplate, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(template_to_obj(template), fh, indent=2)
        fh.write("\n")


def load_template(path) -> ModelTemplate:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return template_from_obj(obj)
