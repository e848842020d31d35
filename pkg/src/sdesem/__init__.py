"""Quasi-likelihood model selection for diffusion-driven covariance structures.

A panel of p coordinates is observed on a uniform high-frequency grid;
its increments carry a covariance h * Sigma, with Sigma generated by a
latent factor structure (loadings, simultaneous equations, factor and
noise covariances). The package simulates such systems, reduces panels
to the realized covariation sufficient statistic, fits competing
covariance templates by quasi-maximum likelihood, and ranks them by the
quasi-Akaike criterion QAIC = -2 loglik + 2q.
"""

from .errors import (
    AllStartsFailed,
    NoConvergedModels,
    NotPositiveDefinite,
    NumericalBlowup,
    NumericalError,
    ParseError,
    SdesemError,
    ShapeError,
    SingularPsi,
    ValidationError,
    exit_code_for,
)
from .matrixcalc import duplication, unvech, vech
from .covstruct import (
    Free,
    IdentifiabilityReport,
    ModelTemplate,
    PatternMatrix,
    StructuralSet,
    build_sigma,
    evaluate,
    fisher_info,
    identifiability_report,
    load_template,
    numeric_rank,
    save_template,
    sigma_jacobian,
    weight_matrix,
)
from .simulate import (
    AffineDrift,
    CustomDrift,
    LatentSystem,
    ObservationPanel,
    Process,
    load_panel_csv,
    ou_exact_step,
    ou_transition,
    quadratic_variation,
    save_panel_csv,
    simulate_panel,
)
from .scenarios import BUILTIN_SCENARIOS, Scenario, builtin_scenario, scenario_from_obj
from .quasilik import (
    QuasiData,
    discrepancy_F,
    grad_hess,
    population_H,
    quasi_loglik,
    quasi_score,
)
from .fitting import (
    FitOptions,
    FitResult,
    GivenVector,
    MomentHeuristic,
    PerturbedTruth,
    PopulationFit,
    fit_population,
    fit_qmle,
    moment_start,
)
from .selection import (
    SelectionEntry,
    SelectionReport,
    misspecification_gap,
    qaic,
    select_model,
    sem_form_qaic,
)
from .experiment import (
    Ergodic,
    ExperimentConfig,
    FixedT,
    SelectionTable,
    load_config,
    read_report,
    run_experiment,
    save_config,
    write_report,
)
from . import kernels

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "SdesemError",
    "ShapeError",
    "ValidationError",
    "ParseError",
    "NumericalError",
    "NotPositiveDefinite",
    "SingularPsi",
    "NumericalBlowup",
    "AllStartsFailed",
    "NoConvergedModels",
    "exit_code_for",
    # matrix utilities
    "vech",
    "unvech",
    "duplication",
    # covariance structure
    "Free",
    "PatternMatrix",
    "ModelTemplate",
    "StructuralSet",
    "evaluate",
    "build_sigma",
    "sigma_jacobian",
    "weight_matrix",
    "fisher_info",
    "numeric_rank",
    "IdentifiabilityReport",
    "identifiability_report",
    "save_template",
    "load_template",
    # simulation
    "AffineDrift",
    "CustomDrift",
    "Process",
    "LatentSystem",
    "ObservationPanel",
    "ou_transition",
    "ou_exact_step",
    "simulate_panel",
    "quadratic_variation",
    "save_panel_csv",
    "load_panel_csv",
    # scenarios
    "Scenario",
    "BUILTIN_SCENARIOS",
    "builtin_scenario",
    "scenario_from_obj",
    # quasi-likelihood
    "QuasiData",
    "quasi_loglik",
    "discrepancy_F",
    "quasi_score",
    "grad_hess",
    "population_H",
    # fitting
    "FitOptions",
    "FitResult",
    "GivenVector",
    "PerturbedTruth",
    "MomentHeuristic",
    "PopulationFit",
    "moment_start",
    "fit_qmle",
    "fit_population",
    # selection
    "qaic",
    "sem_form_qaic",
    "SelectionEntry",
    "SelectionReport",
    "select_model",
    "misspecification_gap",
    # experiment harness
    "FixedT",
    "Ergodic",
    "ExperimentConfig",
    "SelectionTable",
    "load_config",
    "save_config",
    "run_experiment",
    "write_report",
    "read_report",
    # kernels
    "kernels",
]
