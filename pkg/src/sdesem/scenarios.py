"""Experiment scenarios: a true latent system plus candidate templates.

The built-in scenario is an 8-dimensional panel (six indicators on two
crossed latent factors, two indicators on one downstream factor) with all
four latent processes OU, and three candidate templates: the generating
two-factor layout (model1, 19 parameters), an over-parameterized variant
freeing one extra cross loading (model2, 20 parameters), and a collapsed
one-factor layout that cannot match the true covariance (model3, 17
parameters).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .covstruct import (
    ModelTemplate,
    PatternMatrix,
    build_sigma,
    template_from_obj,
)
from .errors import ValidationError
from .simulate import AffineDrift, LatentSystem, Process

__all__ = ["Scenario", "BUILTIN_SCENARIOS", "builtin_scenario", "scenario_from_obj"]

BUILTIN_SCENARIOS = ("paper-sec4",)

# bound kinds: loadings/regressions/covariances free-ranging, variances
# positive with a small floor
_LOAD_BOUND = (-60.0, 60.0)
_VAR_BOUND = (1e-4, 60.0)


@dataclass(frozen=True, eq=False)
class Scenario:
    """A named true system with its candidate templates."""

    name: str
    system: LatentSystem
    model_names: tuple
    templates: tuple
    reference_starts: tuple
    correct_thetas: dict
    sigma0: Optional[np.ndarray]
    default_horizon: float = 1.0

    def __post_init__(self):
        k = len(self.templates)
        if not (len(self.model_names) == len(self.reference_starts) == k):
            raise ValidationError("model names/templates/starts length mismatch")
        for name in self.correct_thetas:
            if name not in self.model_names:
                raise ValidationError(f"correct theta for unknown model {name!r}")


def _true_system() -> LatentSystem:
    xi = Process(
        drift=AffineDrift(a=[[1.0, 0.7], [0.7, 0.5]], mu=[1.0, 2.0]),
        diffusion=[[1.0, 0.3], [0.4, 1.0]],
        init=[2.0, 1.0],
    )
    delta = Process(
        drift=AffineDrift(
            a=np.diag([3.0, 2.0, 4.0, 1.0, 2.0, 1.0]),
            mu=[3.0, 2.0, 1.0, 2.0, 6.0, 4.0],
        ),
        diffusion=np.diag([3.0, 2.0, 1.0, 2.0, 1.0, 3.0]),
        init=[1.0, 3.0, 2.0, 1.0, 4.0, 3.0],
    )
    eps = Process(
        drift=AffineDrift(a=np.diag([1.0, 3.0]), mu=[2.0, 3.0]),
        diffusion=np.diag([1.0, 2.0]),
        init=[1.0, 5.0],
    )
    zeta = Process(
        drift=AffineDrift(a=[[1.0]], mu=[0.0]),
        diffusion=[[2.0]],
        init=[0.0],
    )
    return LatentSystem(
        xi=xi,
        delta=delta,
        eps=eps,
        zeta=zeta,
        lambda_x1=[[1, 0], [5, 0], [2, 0], [0, 1], [0, 4], [0, 7]],
        lambda_x2=[[1], [2]],
        b=[[0.0]],
        gamma=[[3.0, 2.0]],
    )


# increment covariance of the common factor, stated to full precision
SIGMA_XIXI_TRUE = np.array([[1.09, 0.70], [0.70, 1.16]])
SIGMA_DD_TRUE = np.diag([9.0, 4.0, 1.0, 4.0, 1.0, 9.0])
SIGMA_EE_TRUE = np.diag([1.0, 4.0])
SIGMA_ZZ_TRUE = np.array([[4.0]])

THETA1_TRUE = np.array(
    [5, 2, 4, 7, 2, 3, 2, 1.09, 0.70, 1.16, 9, 4, 1, 4, 1, 9, 1, 4, 4],
    dtype=float,
)
THETA2_TRUE = np.array(
    [5, 2, 0, 4, 7, 2, 3, 2, 1.09, 0.70, 1.16, 9, 4, 1, 4, 1, 9, 1, 4, 4],
    dtype=float,
)
# model3 cannot match the truth; this start just sits in the right scale
THETA3_REF = np.array(
    [5, 2, 2, 4, 7, 2, 3, 1.09, 9, 4, 1, 4, 1, 9, 1, 4, 4], dtype=float
)

for _v in (SIGMA_XIXI_TRUE, SIGMA_DD_TRUE, SIGMA_EE_TRUE, SIGMA_ZZ_TRUE,
           THETA1_TRUE, THETA2_TRUE, THETA3_REF):
    _v.setflags(write=False)


def _bounds(kinds: str) -> np.ndarray:
    table = {"l": _LOAD_BOUND, "v": _VAR_BOUND, "c": _LOAD_BOUND}
    return np.array([table[k] for k in kinds], dtype=float)


def _diag_pattern(cells: list) -> list:
    d = len(cells)
    return [[cells[i] if i == j else 0.0 for j in range(d)] for i in range(d)]


def _model1_template() -> ModelTemplate:
    return ModelTemplate(
        q=19,
        p1=6,
        p2=2,
        k1=2,
        k2=1,
        lambda_x1=PatternMatrix(
            [[1.0, 0.0], ["t0", 0.0], ["t1", 0.0],
             [0.0, 1.0], [0.0, "t2"], [0.0, "t3"]]
        ),
        lambda_x2=PatternMatrix([[1.0], ["t4"]]),
        b=PatternMatrix([[0.0]]),
        gamma=PatternMatrix([["t5", "t6"]]),
        sigma_xixi=PatternMatrix([["t7", "t8"], ["t8", "t9"]]),
        sigma_dd=PatternMatrix(
            _diag_pattern(["t10", "t11", "t12", "t13", "t14", "t15"])
        ),
        sigma_ee=PatternMatrix(_diag_pattern(["t16", "t17"])),
        sigma_zz=PatternMatrix([["t18"]]),
        bounds=_bounds("lllllll" + "vcv" + "vvvvvv" + "vv" + "v"),
    )


def _model2_template() -> ModelTemplate:
    return ModelTemplate(
        q=20,
        p1=6,
        p2=2,
        k1=2,
        k2=1,
        lambda_x1=PatternMatrix(
            [[1.0, 0.0], ["t0", 0.0], ["t1", "t2"],
             [0.0, 1.0], [0.0, "t3"], [0.0, "t4"]]
        ),
        lambda_x2=PatternMatrix([[1.0], ["t5"]]),
        b=PatternMatrix([[0.0]]),
        gamma=PatternMatrix([["t6", "t7"]]),
        sigma_xixi=PatternMatrix([["t8", "t9"], ["t9", "t10"]]),
        sigma_dd=PatternMatrix(
            _diag_pattern(["t11", "t12", "t13", "t14", "t15", "t16"])
        ),
        sigma_ee=PatternMatrix(_diag_pattern(["t17", "t18"])),
        sigma_zz=PatternMatrix([["t19"]]),
        bounds=_bounds("llllllll" + "vcv" + "vvvvvv" + "vv" + "v"),
    )


def _model3_template() -> ModelTemplate:
    return ModelTemplate(
        q=17,
        p1=6,
        p2=2,
        k1=1,
        k2=1,
        lambda_x1=PatternMatrix(
            [[1.0], ["t0"], ["t1"], ["t2"], ["t3"], ["t4"]]
        ),
        lambda_x2=PatternMatrix([[1.0], ["t5"]]),
        b=PatternMatrix([[0.0]]),
        gamma=PatternMatrix([["t6"]]),
        sigma_xixi=PatternMatrix([["t7"]]),
        sigma_dd=PatternMatrix(
            _diag_pattern(["t8", "t9", "t10", "t11", "t12", "t13"])
        ),
        sigma_ee=PatternMatrix(_diag_pattern(["t14", "t15"])),
        sigma_zz=PatternMatrix([["t16"]]),
        bounds=_bounds("lllllll" + "v" + "vvvvvv" + "vv" + "v"),
    )


def _oracle_sigma0() -> np.ndarray:
    """Independent block assembly of the true increment covariance."""
    l1 = np.array([[1, 0], [5, 0], [2, 0], [0, 1], [0, 4], [0, 7]], dtype=float)
    l2 = np.array([[1.0], [2.0]])
    g = np.array([[3.0, 2.0]])
    sxx = SIGMA_XIXI_TRUE
    s11 = l1 @ sxx @ l1.T + SIGMA_DD_TRUE
    s12 = l1 @ sxx @ g.T @ l2.T  # Psi = 1 here
    s22 = l2 @ (g @ sxx @ g.T + SIGMA_ZZ_TRUE) @ l2.T + SIGMA_EE_TRUE
    top = np.hstack([s11, s12])
    bottom = np.hstack([s12.T, s22])
    sigma = np.vstack([top, bottom])
    return (sigma + sigma.T) / 2.0


def builtin_scenario(name: str = "paper-sec4") -> Scenario:
    """Construct a built-in scenario by key; self-checks its covariance."""
    if name not in BUILTIN_SCENARIOS:
        raise ValidationError(
            f"unknown scenario {name!r}; built-ins: {', '.join(BUILTIN_SCENARIOS)}"
        )
    templates = (_model1_template(), _model2_template(), _model3_template())
    scenario = Scenario(
        name=name,
        system=_true_system(),
        model_names=("model1", "model2", "model3"),
        templates=templates,
        reference_starts=(THETA1_TRUE, THETA2_TRUE, THETA3_REF),
        correct_thetas={"model1": THETA1_TRUE, "model2": THETA2_TRUE},
        sigma0=_oracle_sigma0(),
        default_horizon=1.0,
    )
    gap = np.abs(build_sigma(templates[0], THETA1_TRUE) - scenario.sigma0).max()
    if gap > 1e-12:
        raise ValidationError(
            f"scenario self-check failed: covariance mismatch {gap:.2e}"
        )
    return scenario


# --- custom scenario JSON ----------------------------------------------------

_PROCESS_KEYS = {"a", "mu", "s", "init"}
_SYSTEM_KEYS = {"xi", "delta", "eps", "zeta", "lambda_x1", "lambda_x2", "b", "gamma"}
_SCENARIO_KEYS = {
    "name",
    "system",
    "templates",
    "model_names",
    "reference_starts",
    "default_horizon",
}


def _process_from_obj(obj: dict, label: str) -> Process:
    if not isinstance(obj, dict):
        raise ValidationError(f"{label} must be an object")
    unknown = sorted(set(obj) - _PROCESS_KEYS)
    if unknown:
        raise ValidationError(f"{label}: unknown fields {unknown}")
    missing = sorted(_PROCESS_KEYS - set(obj))
    if missing:
        raise ValidationError(f"{label}: missing fields {missing}")
    return Process(
        drift=AffineDrift(a=obj["a"], mu=obj["mu"]),
        diffusion=obj["s"],
        init=obj["init"],
    )


def scenario_from_obj(obj: dict) -> Scenario:
    """Custom scenario from config JSON (affine drifts only)."""
    if not isinstance(obj, dict):
        raise ValidationError("scenario must be a name or an object")
    unknown = sorted(set(obj) - _SCENARIO_KEYS)
    if unknown:
        raise ValidationError(f"scenario: unknown fields {unknown}")
    for key in ("system", "templates"):
        if key not in obj:
            raise ValidationError(f"scenario: missing field {key!r}")
    sys_obj = obj["system"]
    if not isinstance(sys_obj, dict):
        raise ValidationError("scenario system must be an object")
    unknown = sorted(set(sys_obj) - _SYSTEM_KEYS)
    if unknown:
        raise ValidationError(f"system: unknown fields {unknown}")
    missing = sorted(_SYSTEM_KEYS - set(sys_obj))
    if missing:
        raise ValidationError(f"system: missing fields {missing}")
    system = LatentSystem(
        xi=_process_from_obj(sys_obj["xi"], "xi"),
        delta=_process_from_obj(sys_obj["delta"], "delta"),
        eps=_process_from_obj(sys_obj["eps"], "eps"),
        zeta=_process_from_obj(sys_obj["zeta"], "zeta"),
        lambda_x1=sys_obj["lambda_x1"],
        lambda_x2=sys_obj["lambda_x2"],
        b=sys_obj["b"],
        gamma=sys_obj["gamma"],
    )
    templates = tuple(template_from_obj(t) for t in obj["templates"])
    names = tuple(obj.get("model_names", [f"model{i+1}" for i in range(len(templates))]))
    starts_obj = obj.get("reference_starts")
    if starts_obj is None:
        starts = tuple(None for _ in templates)
    else:
        if len(starts_obj) != len(templates):
            raise ValidationError("reference_starts length != templates")
        starts = tuple(np.asarray(v, dtype=float) for v in starts_obj)
    return Scenario(
        name=str(obj.get("name", "custom")),
        system=system,
        model_names=names,
        templates=templates,
        reference_starts=starts,
        correct_thetas={},
        sigma0=None,
        default_horizon=float(obj.get("default_horizon", 1.0)),
    )
