"""Monte Carlo experiment runner and report writers.

Repeatedly simulates the scenario's true system, reduces each panel to
its sufficient statistic, fits every candidate template, selects by QAIC,
and tabulates how often each model wins per sample size. Replication
streams are pre-split from (seed, replication, n, process), so the table
is a pure function of the config regardless of worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import NumericalError, ParseError, ValidationError
from .fitting import FitOptions, GivenVector, MomentHeuristic, PerturbedTruth, fit_qmle
from .quasilik import QuasiData
from .scenarios import Scenario, builtin_scenario, scenario_from_obj
from .selection import select_model
from .simulate import simulate_panel

__all__ = [
    "FixedT",
    "Ergodic",
    "ExperimentConfig",
    "SelectionTable",
    "load_config",
    "save_config",
    "run_experiment",
    "write_report",
    "read_report",
]

FULL_SCALE_REPS = 10000
_N_STREAMS = 4  # one per driving process: xi, zeta, delta, eps


@dataclass(frozen=True)
class FixedT:
    """Keep the observation horizon fixed while n grows (in-fill)."""


@dataclass(frozen=True)
class Ergodic:
    """Let the horizon grow as T(n) = c * n**gamma (long-span sampling).

    gamma < 1/2 keeps n h_n^2 -> 0 while n h_n -> infinity.
    """

    c: float = 1.0
    gamma: float = 0.4

    def __post_init__(self):
        if not (self.c > 0):
            raise ValidationError("ergodic horizon constant must be positive")
        if not (0 < self.gamma < 0.5):
            raise ValidationError("ergodic exponent must lie in (0, 1/2)")

    def horizon(self, n: int) -> float:
        return self.c * float(n) ** self.gamma


_CONFIG_KEYS = {
    "scenario",
    "reps",
    "n_grid",
    "T",
    "sampling_regime",
    "seed",
    "parallelism",
    "fit",
}
_FIT_KEYS = {
    "init",
    "max_iters",
    "gradient_tolerance",
    "restarts",
    "feasibility_margin",
    "seed",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    `scenario` stays in its raw form (built-in name or custom mapping) so
    configs round-trip exactly; resolve_scenario() materializes it.
    """

    scenario: Union[str, dict]
    reps: int
    n_grid: tuple
    T: float = 1.0
    sampling_regime: Union[FixedT, Ergodic] = field(default_factory=FixedT)
    seed: int = 0
    parallelism: int = 1
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        if self.reps < 1:
            problems.append("reps must be at least 1")
        n_grid = tuple(self.n_grid)
        if len(n_grid) == 0:
            problems.append("n_grid must be nonempty")
        elif any((not isinstance(n, int)) or n < 1 for n in n_grid):
            problems.append("n_grid entries must be positive integers")
        if not (self.T > 0):
            problems.append("T must be positive")
        if not isinstance(self.sampling_regime, (FixedT, Ergodic)):
            problems.append("sampling_regime must be FixedT or Ergodic")
        if self.parallelism < 1:
            problems.append("parallelism must be at least 1")
        if not isinstance(self.scenario, (str, dict)):
            problems.append("scenario must be a built-in name or a mapping")
        unknown = set(self.fit) - _FIT_KEYS
        if unknown:
            problems.append("unknown fit option fields: %s" % sorted(unknown))
        if problems:
            raise ValidationError("; ".join(problems))
        object.__setattr__(self, "n_grid", n_grid)
        _fit_options_for(self, np.zeros(0), check_only=True)

    def resolve_scenario(self) -> Scenario:
        if isinstance(self.scenario, str):
            return builtin_scenario(self.scenario)
        return scenario_from_obj(self.scenario)

    def horizon_for(self, n: int) -> float:
        if isinstance(self.sampling_regime, Ergodic):
            return self.sampling_regime.horizon(n)
        return self.T


def _regime_to_obj(regime) -> Union[str, dict]:
    if isinstance(regime, FixedT):
        return "fixed-T"
    return {"ergodic": {"c": regime.c, "gamma": regime.gamma}}


def _regime_from_obj(obj) -> Union[FixedT, Ergodic]:
    if obj == "fixed-T":
        return FixedT()
    if isinstance(obj, dict) and set(obj) == {"ergodic"}:
        inner = obj["ergodic"]
        if not isinstance(inner, dict) or set(inner) - {"c", "gamma"}:
            raise ValidationError("ergodic regime takes fields c and gamma")
        return Ergodic(**{k: float(v) for k, v in inner.items()})
    raise ValidationError(
        "sampling_regime must be 'fixed-T' or {'ergodic': {c, gamma}}"
    )


def config_to_obj(config: ExperimentConfig) -> dict:
    return {
        "scenario": config.scenario,
        "reps": config.reps,
        "n_grid": list(config.n_grid),
        "T": config.T,
        "sampling_regime": _regime_to_obj(config.sampling_regime),
        "seed": config.seed,
        "parallelism": config.parallelism,
        "fit": dict(config.fit),
    }


def config_from_obj(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ValidationError("unknown config fields: %s" % sorted(unknown))
    missing = {"scenario", "reps", "n_grid", "seed"} - set(obj)
    if missing:
        raise ValidationError("missing config fields: %s" % sorted(missing))
    return ExperimentConfig(
        scenario=obj["scenario"],
        reps=int(obj["reps"]),
        n_grid=tuple(int(n) for n in obj["n_grid"]),
        T=float(obj.get("T", 1.0)),
        sampling_regime=_regime_from_obj(obj.get("sampling_regime", "fixed-T")),
        seed=int(obj["seed"]),
        parallelism=int(obj.get("parallelism", 1)),
        fit=dict(obj.get("fit", {})),
    )


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment config; unknown fields rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"
        ) from exc
    return config_from_obj(obj)


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_obj(config), fh, indent=2)
        fh.write("\n")


def _fit_options_for(
    config: ExperimentConfig, reference, check_only: bool = False
) -> Optional[FitOptions]:
    """FitOptions for one template from the config's fit mapping.

    init accepts "reference" (start at the scenario's reference vector,
    the default), "moment", {"perturbed": scale} (jitter around the
    reference), or {"given": [...]}.
    """
    fit = config.fit
    init_spec = fit.get("init", "reference")
    kwargs = {
        "max_iters": int(fit.get("max_iters", 400)),
        "gradient_tolerance": float(fit.get("gradient_tolerance", 1e-7)),
        "restarts": int(fit.get("restarts", 1)),
        "feasibility_margin": float(fit.get("feasibility_margin", 1e-6)),
        "seed": int(fit.get("seed", 0)),
    }
    needs_reference = init_spec == "reference" or (
        isinstance(init_spec, dict) and set(init_spec) == {"perturbed"}
    )
    if needs_reference and not check_only and reference is None:
        raise ValidationError(
            "the scenario provides no reference start for some template; "
            "set fit.init to 'moment' or {'given': [...]}"
        )
    if init_spec == "reference":
        ref = None if check_only else tuple(np.asarray(reference, dtype=float))
        init = MomentHeuristic() if check_only else GivenVector(ref)
    elif init_spec == "moment":
        init, ref = MomentHeuristic(), None
    elif isinstance(init_spec, dict) and set(init_spec) == {"perturbed"}:
        init = PerturbedTruth(float(init_spec["perturbed"]))
        # validation-only calls have no reference vector yet
        ref = (0.0,) if check_only else tuple(np.asarray(reference, dtype=float))
    elif isinstance(init_spec, dict) and set(init_spec) == {"given"}:
        init, ref = GivenVector(tuple(float(v) for v in init_spec["given"])), None
    else:
        raise ValidationError(
            "fit init must be 'reference', 'moment', {'perturbed': s} "
            "or {'given': [...]}"
        )
    opts = FitOptions(init=init, reference=ref, **kwargs)
    return None if check_only else opts


@dataclass
class SelectionTable:
    """Winner counts per model and sample size, plus exclusion accounting.

    For every n: sum over models of counts[model][n] + no_winner[n] = reps.
    """

    model_names: list
    n_grid: list
    reps: int
    counts: dict
    exclusions: dict
    no_winner: dict
    wall_time: float = 0.0

    def check(self) -> None:
        for n in self.n_grid:
            total = sum(self.counts[m][n] for m in self.model_names)
            if total + self.no_winner[n] != self.reps:
                raise ValidationError(
                    f"counts at n={n} sum to {total} + {self.no_winner[n]} "
                    f"no-winner != reps={self.reps}"
                )

    def share(self, model: str, n: int) -> float:
        return self.counts[model][n] / self.reps

    def to_obj(self) -> dict:
        return {
            "model_names": list(self.model_names),
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "counts": {m: {str(n): self.counts[m][n] for n in self.n_grid}
                       for m in self.model_names},
            "exclusions": {m: {str(n): self.exclusions[m][n] for n in self.n_grid}
                           for m in self.model_names},
            "no_winner": {str(n): self.no_winner[n] for n in self.n_grid},
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "SelectionTable":
        names = list(obj["model_names"])
        n_grid = [int(n) for n in obj["n_grid"]]
        return cls(
            model_names=names,
            n_grid=n_grid,
            reps=int(obj["reps"]),
            counts={m: {n: int(obj["counts"][m][str(n)]) for n in n_grid}
                    for m in names},
            exclusions={m: {n: int(obj["exclusions"][m][str(n)]) for n in n_grid}
                        for m in names},
            no_winner={n: int(obj["no_winner"][str(n)]) for n in n_grid},
            wall_time=float(obj["wall_time"]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SelectionTable):
            return NotImplemented
        return self.to_obj() == other.to_obj()


def _replication_streams(seed: int, rep: int, n: int) -> list:
    """Independent generators for one replication, one per driving process."""
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, n, k)))
        for k in range(_N_STREAMS)
    ]


def _run_one(args) -> tuple[int, int, Optional[str], list]:
    """Worker: one replication at one sample size.

    Returns (rep, n, winner or None, list of excluded model names).
    """
    config, scenario, rep, n = args
    names = list(scenario.model_names)
    streams = _replication_streams(config.seed, rep, n)
    try:
        panel = simulate_panel(
            scenario.system, n=n, horizon=config.horizon_for(n), rng=streams
        )
        data = QuasiData.from_panel(panel)
    except NumericalError:
        return rep, n, None, names

    pairs = []
    ids = []
    excluded = []
    for m, template in enumerate(scenario.templates):
        opts = _fit_options_for(config, scenario.reference_starts[m])
        try:
            result = fit_qmle(data, template, opts)
        except NumericalError:
            excluded.append(names[m])
            continue
        if not result.converged:
            excluded.append(names[m])
        pairs.append((template, result))
        ids.append(names[m])
    converged_any = any(r.converged for _, r in pairs)
    if not converged_any:
        return rep, n, None, excluded
    report = select_model(data, pairs, model_ids=ids)
    return rep, n, report.winner, excluded


def run_experiment(config: ExperimentConfig) -> SelectionTable:
    """Run the full Monte Carlo grid described by the config.

    Per-replication simulation or fit failures are recorded as exclusions
    (and, when no model converges at all, as a no-winner replication);
    they never abort the run.
    """
    scenario = config.resolve_scenario()
    names = list(scenario.model_names)
    n_grid = list(config.n_grid)
    counts = {m: {n: 0 for n in n_grid} for m in names}
    exclusions = {m: {n: 0 for n in n_grid} for m in names}
    no_winner = {n: 0 for n in n_grid}

    jobs = [(config, scenario, rep, n) for n in n_grid for rep in range(config.reps)]
    start = time.perf_counter()
    if config.parallelism > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=16))
    else:
        results = [_run_one(job) for job in jobs]
    wall = time.perf_counter() - start

    for _, n, winner, excluded in results:
        if winner is None:
            no_winner[n] += 1
        else:
            counts[winner][n] += 1
        for name in excluded:
            exclusions[name][n] += 1

    table = SelectionTable(
        model_names=names,
        n_grid=n_grid,
        reps=config.reps,
        counts=counts,
        exclusions=exclusions,
        no_winner=no_winner,
        wall_time=wall,
    )
    table.check()
    return table


def write_report(table: SelectionTable, fmt: str, path) -> None:
    """Write the table as CSV (models x n counts) or a JSON mirror."""
    if fmt == "csv":
        header = "model," + ",".join(f"n={n}" for n in table.n_grid)
        lines = [header]
        for m in table.model_names:
            lines.append(
                m + "," + ",".join(str(table.counts[m][n]) for n in table.n_grid)
            )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(table.to_obj(), fh, indent=2)
            fh.write("\n")
    else:
        raise ValidationError(f"unknown report format {fmt!r}; use csv or json")


def read_report(path) -> SelectionTable:
    """Read back a JSON report written by write_report."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(
                f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"
            ) from exc
    return SelectionTable.from_obj(obj)
