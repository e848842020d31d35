"""Command line interface.

Subcommands: simulate (panel CSV), fit (panel + template -> JSON),
select (panel + templates -> ranking JSON), experiment (config ->
selection table), diagnose (template -> identifiability report).
Exit codes: 0 success, 2 validation/parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import kernels
from .covstruct import identifiability_report, load_template
from .errors import SdesemError, ValidationError, exit_code_for
from .experiment import (
    FULL_SCALE_REPS,
    config_from_obj,
    config_to_obj,
    load_config,
    run_experiment,
    write_report,
)
from .fitting import FitOptions, GivenVector, MomentHeuristic, fit_qmle
from .quasilik import QuasiData
from .scenarios import BUILTIN_SCENARIOS, builtin_scenario
from .selection import select_model
from .simulate import load_panel_csv, save_panel_csv, simulate_panel

__all__ = ["main", "build_parser"]


def _write_json(obj, path) -> None:
    if path == "-":
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdesem",
        description="Model selection for diffusion-driven covariance "
        "structures observed at high frequency.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a panel, write CSV")
    p_sim.add_argument("--scenario", default="paper-sec4",
                       help="built-in scenario name (%s)" % ", ".join(BUILTIN_SCENARIOS))
    p_sim.add_argument("--n", type=int, required=True, help="number of increments")
    p_sim.add_argument("--T", type=float, default=None,
                       help="observation horizon (default: scenario's)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default="-", help="output path, - for stdout")

    p_fit = sub.add_parser("fit", help="fit one template to a panel")
    p_fit.add_argument("--panel", required=True, help="panel CSV path")
    p_fit.add_argument("--template", required=True, help="template JSON path")
    p_fit.add_argument("--init", default="moment",
                       help="'moment' or comma-separated start vector")
    p_fit.add_argument("--restarts", type=int, default=3)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", default="-")

    p_sel = sub.add_parser("select", help="rank templates on one panel by QAIC")
    p_sel.add_argument("--panel", required=True)
    p_sel.add_argument("--template", required=True, action="append",
                       help="template JSON path (repeatable)")
    p_sel.add_argument("--restarts", type=int, default=3)
    p_sel.add_argument("--seed", type=int, default=0)
    p_sel.add_argument("--out", default="-")

    p_exp = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    p_exp.add_argument("--config", required=True, help="experiment config JSON")
    p_exp.add_argument("--reps", type=int, default=None, help="override reps")
    p_exp.add_argument("--seed", type=int, default=None, help="override seed")
    p_exp.add_argument("--jobs", type=int, default=None, help="worker processes")
    p_exp.add_argument("--full-scale", action="store_true",
                       help="run the full %d replications" % FULL_SCALE_REPS)
    p_exp.add_argument("--format", choices=("csv", "json"), default="csv")
    p_exp.add_argument("--out", required=True)

    p_diag = sub.add_parser("diagnose", help="identifiability report for a template")
    p_diag.add_argument("--template", required=True)
    p_diag.add_argument("--theta", required=True,
                        help="comma-separated reference parameter vector")
    p_diag.add_argument("--grid", type=int, default=1000)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--out", default="-")

    parser.add_argument("--version", action="version",
                        version="%(prog)s " + _version())
    return parser


def _version() -> str:
    from . import __version__

    return __version__


def _parse_theta(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",") if tok.strip()])
    except ValueError as exc:
        raise ValidationError(f"could not parse theta vector: {exc}") from exc


def _cmd_simulate(args) -> int:
    scenario = builtin_scenario(args.scenario)
    horizon = scenario.default_horizon if args.T is None else args.T
    streams = [
        np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0, args.n, k)))
        for k in range(4)
    ]
    panel = simulate_panel(scenario.system, n=args.n, horizon=horizon, rng=streams)
    if args.out == "-":
        save_panel_csv(panel, sys.stdout)
    else:
        save_panel_csv(panel, args.out)
    return 0


def _fit_opts(args) -> FitOptions:
    if args.init == "moment":
        init = MomentHeuristic()
    else:
        init = GivenVector(tuple(_parse_theta(args.init)))
    return FitOptions(init=init, restarts=args.restarts, seed=args.seed)


def _fit_result_obj(result) -> dict:
    return {
        "theta_hat": [float(v) for v in result.theta_hat],
        "loglik": result.loglik,
        "converged": result.converged,
        "iterations": result.iterations,
        "grad_norm": result.grad_norm,
        "boundary_hit": result.boundary_hit,
    }


def _cmd_fit(args) -> int:
    panel = load_panel_csv(args.panel)
    template = load_template(args.template)
    data = QuasiData.from_panel(panel)
    result = fit_qmle(data, template, _fit_opts(args))
    _write_json(_fit_result_obj(result), args.out)
    return 0


def _cmd_select(args) -> int:
    panel = load_panel_csv(args.panel)
    templates = [load_template(path) for path in args.template]
    data = QuasiData.from_panel(panel)
    opts = FitOptions(init=MomentHeuristic(), restarts=args.restarts, seed=args.seed)
    pairs = [(tpl, fit_qmle(data, tpl, opts)) for tpl in templates]
    report = select_model(data, pairs)
    _write_json(report.to_obj(), args.out)
    return 0


def _cmd_experiment(args) -> int:
    config = load_config(args.config)
    obj = config_to_obj(config)
    if args.full_scale:
        obj["reps"] = FULL_SCALE_REPS
    if args.reps is not None:
        obj["reps"] = args.reps
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.jobs is not None:
        obj["parallelism"] = args.jobs
    config = config_from_obj(obj)
    table = run_experiment(config)
    write_report(table, args.format, args.out)
    return 0


def _cmd_diagnose(args) -> int:
    template = load_template(args.template)
    theta = _parse_theta(args.theta)
    report = identifiability_report(template, theta, grid=args.grid, seed=args.seed)
    obj = report.to_obj()
    obj["backend"] = kernels.BACKEND
    _write_json(obj, args.out)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "select": _cmd_select,
    "experiment": _cmd_experiment,
    "diagnose": _cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SdesemError as exc:
        print(f"sdesem {args.command}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"sdesem {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
