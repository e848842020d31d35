"""Tests for the box-constrained minimizer and the QMLE fitting layer.

Optimizer checks use problems with known solutions (quadratics, the
Rosenbrock valley, linear objectives pinned to a corner); fitting checks
use covariance targets whose optimum is known in closed form or by
construction.
"""

import numpy as np
import pytest

from sdesem.covstruct import PatternMatrix, ModelTemplate, build_sigma
from sdesem.errors import (
    AllStartsFailed,
    NumericalError,
    ValidationError,
)
from sdesem.fitting import (
    FitOptions,
    GivenVector,
    MomentHeuristic,
    PerturbedTruth,
    fit_population,
    fit_qmle,
    moment_start,
)
from sdesem.optimize import minimize_box
from sdesem.quasilik import QuasiData, population_H, quasi_loglik
from sdesem.scenarios import builtin_scenario


def scalar_template(lo=1e-3, hi=100.0):
    empty = PatternMatrix.empty
    return ModelTemplate(
        q=1, p1=1, p2=0, k1=0, k2=0,
        lambda_x1=empty(1, 0), lambda_x2=empty(0, 0), b=empty(0, 0),
        gamma=empty(0, 0), sigma_xixi=empty(0, 0),
        sigma_dd=PatternMatrix([["t0"]]),
        sigma_ee=empty(0, 0), sigma_zz=empty(0, 0),
        bounds=np.array([[lo, hi]]),
    )


def infeasible_template():
    """Fixed negative variance entry: every evaluation fails."""
    empty = PatternMatrix.empty
    return ModelTemplate(
        q=1, p1=2, p2=0, k1=0, k2=0,
        lambda_x1=empty(2, 0), lambda_x2=empty(0, 0), b=empty(0, 0),
        gamma=empty(0, 0), sigma_xixi=empty(0, 0),
        sigma_dd=PatternMatrix([[-1.0, 0.0], [0.0, "t0"]]),
        sigma_ee=empty(0, 0), sigma_zz=empty(0, 0),
        bounds=np.array([[1e-4, 10.0]]),
    )


def scalar_data(q, n=50, h=0.02):
    return QuasiData(n=n, h=h, p=1, q_xx=np.array([[float(q)]]))


class TestMinimizeBox:
    def test_quadratic_interior_minimum(self):
        a = np.array([[3.0, 0.5], [0.5, 1.0]])
        c = np.array([0.7, -0.4])

        def fg(x):
            r = x - c
            return 0.5 * float(r @ a @ r), a @ r

        run = minimize_box(fg, np.array([5.0, 5.0]), np.full(2, -10.0),
                           np.full(2, 10.0), 100, 1e-9)
        assert run.converged
        assert np.abs(run.x - c).max() < 1e-7
        assert run.pg_norm <= 1e-9
        assert not run.boundary_hit

    def test_diagonal_quadratic_clips_to_box(self):
        # separable quadratic: the constrained optimum is the clipped center
        center = np.array([4.0, -3.0, 0.2])
        weights = np.array([1.0, 2.0, 0.5])
        lo, hi = np.full(3, -1.0), np.full(3, 1.0)

        def fg(x):
            r = x - center
            return 0.5 * float(r @ (weights * r)), weights * r

        run = minimize_box(fg, np.zeros(3), lo, hi, 100, 1e-10)
        assert run.converged
        assert run.boundary_hit
        assert np.abs(run.x - np.clip(center, lo, hi)).max() < 1e-9

    def test_rosenbrock_valley(self):
        def fg(x):
            f = (1 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2
            g = np.array([
                -2.0 * (1 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
                200.0 * (x[1] - x[0] ** 2),
            ])
            return f, g

        run = minimize_box(fg, np.array([-1.2, 1.0]), np.full(2, -2.0),
                           np.full(2, 2.0), 400, 1e-8)
        assert run.converged
        assert np.abs(run.x - 1.0).max() < 1e-5

    def test_linear_objective_pins_the_corner(self):
        def fg(x):
            return float(x.sum()), np.ones_like(x)

        run = minimize_box(fg, np.array([0.5, 0.5]), np.zeros(2), np.ones(2),
                           50, 1e-12)
        assert run.converged
        assert np.array_equal(run.x, np.zeros(2))
        assert run.boundary_hit

    def test_infeasible_start_returns_none(self):
        def fg(x):
            raise NumericalError("never feasible")

        assert minimize_box(fg, np.zeros(1), np.full(1, -1.0), np.ones(1),
                            10, 1e-8) is None

    def test_feasibility_backtracking(self):
        # objective defined only on x <= 2; the minimizer must reject trial
        # points beyond the wall and keep the iterate inside
        def fg(x):
            if x[0] > 2.0:
                raise NumericalError("outside the feasible wall")
            return float((x[0] - 5.0) ** 2), np.array([2.0 * (x[0] - 5.0)])

        run = minimize_box(fg, np.array([1.0]), np.zeros(1), np.full(1, 10.0),
                           60, 1e-8)
        assert run is not None
        assert run.x[0] <= 2.0
        assert run.x[0] > 1.9
        assert run.rejections > 0
        assert not run.converged  # the wall is not a box bound

    def test_zero_iterations_budget(self):
        def fg(x):
            return float(x @ x), 2.0 * x

        run = minimize_box(fg, np.array([1e-6]), np.full(1, -1.0), np.ones(1),
                           0, 1e-3)
        assert run.iterations == 0
        assert run.converged  # already within tolerance

    def test_deterministic(self):
        a = np.array([[2.0, 0.3], [0.3, 4.0]])

        def fg(x):
            return 0.5 * float(x @ a @ x) - x[0], a @ x - np.array([1.0, 0.0])

        r1 = minimize_box(fg, np.array([3.0, -2.0]), np.full(2, -5.0),
                          np.full(2, 5.0), 80, 1e-10)
        r2 = minimize_box(fg, np.array([3.0, -2.0]), np.full(2, -5.0),
                          np.full(2, 5.0), 80, 1e-10)
        assert np.array_equal(r1.x, r2.x)
        assert r1.f == r2.f
        assert r1.iterations == r2.iterations


class TestMomentStart:
    def test_exact_at_population_target(self):
        # at Q = Sigma0 the heuristic inverts the generating structure
        scenario = builtin_scenario()
        got = moment_start(scenario.templates[0], scenario.sigma0)
        assert np.abs(got - scenario.correct_thetas["model1"]).max() < 1e-10

    def test_scalar_reads_off_q(self):
        assert moment_start(scalar_template(), np.array([[3.7]]))[0] == 3.7

    @pytest.mark.parametrize("model_idx", [0, 1, 2])
    def test_always_inside_bounds(self, model_idx):
        tpl = builtin_scenario().templates[model_idx]
        rng = np.random.default_rng(60 + model_idx)
        for _ in range(20):
            a = rng.standard_normal((8, 8))
            q = a @ a.T + 0.1 * np.eye(8)
            theta = moment_start(tpl, q)
            assert np.isfinite(theta).all()
            assert tpl.contains(theta)


class TestFitOptions:
    def test_validation(self):
        with pytest.raises(ValidationError):
            FitOptions(max_iters=-1)
        with pytest.raises(ValidationError):
            FitOptions(restarts=0)
        with pytest.raises(ValidationError):
            FitOptions(gradient_tolerance=0.0)
        with pytest.raises(ValidationError):
            FitOptions(feasibility_margin=0.5)
        with pytest.raises(ValidationError):
            FitOptions(init="truth")
        with pytest.raises(ValidationError, match="reference"):
            FitOptions(init=PerturbedTruth())
        with pytest.raises(ValidationError):
            PerturbedTruth(scale=0.0)

    def test_reference_coerced(self):
        opts = FitOptions(init=PerturbedTruth(0.05), reference=[1, 2])
        assert opts.reference == (1.0, 2.0)


class TestFitQmle:
    def test_scalar_closed_form(self):
        # the quasi-likelihood in one dimension peaks at theta = q
        res = fit_qmle(scalar_data(3.7), scalar_template(),
                       FitOptions(init=GivenVector((1.0,))))
        assert res.converged
        assert abs(res.theta_hat[0] - 3.7) < 1e-8

    def test_boundary_optimum_reported(self):
        res = fit_qmle(scalar_data(5.0), scalar_template(lo=0.1, hi=2.0),
                       FitOptions(init=GivenVector((1.0,))))
        assert res.theta_hat[0] == 2.0
        assert res.boundary_hit
        assert res.converged  # projected gradient vanishes at the bound

    @pytest.mark.parametrize(
        "opts",
        [
            FitOptions(init=MomentHeuristic(), restarts=1,
                       gradient_tolerance=1e-8),
            FitOptions(init=GivenVector(tuple([4.0] * 7 + [1.0, 0.3, 1.0]
                                              + [5.0] * 6 + [2.0] * 3)),
                       gradient_tolerance=1e-8),
            None,  # filled in below with PerturbedTruth
        ],
    )
    def test_recovers_interior_truth(self, opts):
        scenario = builtin_scenario()
        tpl = scenario.templates[0]
        theta0 = scenario.correct_thetas["model1"]
        if opts is None:
            opts = FitOptions(init=PerturbedTruth(0.05),
                              reference=tuple(theta0), seed=5,
                              gradient_tolerance=1e-8)
        data = QuasiData(n=1000, h=0.001, p=8, q_xx=scenario.sigma0)
        res = fit_qmle(data, tpl, opts)
        assert res.converged
        assert np.abs(res.theta_hat - theta0).max() < 3e-6

    def test_loglik_is_recomputed_from_theta(self):
        scenario = builtin_scenario()
        data = QuasiData(n=100, h=0.01, p=8, q_xx=scenario.sigma0)
        res = fit_qmle(data, scenario.templates[2],
                       FitOptions(init=MomentHeuristic()))
        direct = quasi_loglik(
            data, build_sigma(scenario.templates[2], res.theta_hat)
        )
        assert res.loglik == direct

    def test_estimate_stays_in_box(self):
        scenario = builtin_scenario()
        rng = np.random.default_rng(71)
        a = rng.standard_normal((8, 8))
        data = QuasiData(n=64, h=0.05, p=8, q_xx=a @ a.T + 0.5 * np.eye(8))
        for tpl in scenario.templates:
            res = fit_qmle(data, tpl)
            assert tpl.contains(res.theta_hat)

    def test_restart_bookkeeping_and_determinism(self):
        scenario = builtin_scenario()
        data = QuasiData(n=200, h=0.005, p=8, q_xx=scenario.sigma0)
        opts = FitOptions(init=MomentHeuristic(), restarts=4, seed=3)
        r1 = fit_qmle(data, scenario.templates[0], opts)
        r2 = fit_qmle(data, scenario.templates[0], opts)
        assert r1.n_starts == 4
        assert r1.n_failed_starts < r1.n_starts
        assert r1.n_failed_starts == r2.n_failed_starts
        assert np.array_equal(r1.theta_hat, r2.theta_hat)
        assert r1.loglik == r2.loglik

    def test_restarts_agree_on_unimodal_target(self):
        scenario = builtin_scenario()
        data = QuasiData(n=200, h=0.005, p=8, q_xx=scenario.sigma0)
        single = fit_qmle(data, scenario.templates[0],
                          FitOptions(restarts=1))
        multi = fit_qmle(data, scenario.templates[0],
                         FitOptions(restarts=5, seed=11))
        assert np.abs(single.theta_hat - multi.theta_hat).max() < 1e-5

    def test_scale_equivariance(self):
        # scaling Q by c^2 leaves loadings alone and scales every variance
        # and covariance parameter by c^2 (regression slopes unchanged)
        scenario = builtin_scenario()
        tpl = scenario.templates[0]
        rng = np.random.default_rng(72)
        a = rng.standard_normal((8, 8))
        q = a @ a.T + 2.0 * np.eye(8)
        c2 = 4.0
        base = fit_qmle(QuasiData(n=500, h=0.002, p=8, q_xx=q), tpl)
        scaled = fit_qmle(QuasiData(n=500, h=0.002, p=8, q_xx=c2 * q), tpl)
        want = base.theta_hat.copy()
        want[7:10] *= c2   # factor covariance block
        want[10:] *= c2    # noise variances
        rel = np.abs(scaled.theta_hat - want) / np.maximum(1.0, np.abs(want))
        assert rel.max() < 1e-4

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError, match="dimension"):
            fit_qmle(scalar_data(1.0), builtin_scenario().templates[0])

    def test_given_vector_length_checked(self):
        with pytest.raises(ValidationError, match="length"):
            fit_qmle(scalar_data(1.0), scalar_template(),
                     FitOptions(init=GivenVector((1.0, 2.0))))

    def test_all_starts_failed(self):
        data = QuasiData(n=10, h=0.1, p=2, q_xx=np.eye(2))
        with pytest.raises(AllStartsFailed):
            fit_qmle(data, infeasible_template(),
                     FitOptions(init=GivenVector((1.0,)), restarts=2))


class TestFitPopulation:
    def test_attainable_target(self):
        scenario = builtin_scenario()
        fit = fit_population(scenario.templates[0], scenario.sigma0)
        assert fit.converged
        theta0 = scenario.correct_thetas["model1"]
        assert np.abs(fit.theta_bar - theta0).max() < 1e-5
        # criterion value matches the direct evaluation and the closed form
        direct = population_H(scenario.templates[0], fit.theta_bar,
                              scenario.sigma0)
        assert abs(fit.h_value - direct) < 1e-9

    def test_collapsed_template_pays_a_gap(self):
        scenario = builtin_scenario()
        h1 = fit_population(scenario.templates[0], scenario.sigma0).h_value
        h3 = fit_population(scenario.templates[2], scenario.sigma0).h_value
        assert h1 - h3 > 0.3

    def test_dimension_checked(self):
        with pytest.raises(ValidationError):
            fit_population(scalar_template(), np.eye(2))
