# tests/test_numerics.py

import math

import numpy as np
import pytest
from scipy import optimize, special

from models.optimization import (ConcaveProblem, LinearConstraint, LinearProgram, RootBracket,
                                 SubgradientConfig)
from services.errors import BracketError, DomainError
from services.harvest_service import harvest_service
from services.numerics_service import neg_log, numerics_service


class TestLambertW:

    @pytest.mark.parametrize("x, expected", [(0.0, 0.0), (math.e, 1.0), (1.0, 0.5671432904)])
    def test_known_values(self, x, expected):
        assert numerics_service.lambert_w0(x) == pytest.approx(expected, abs=1e-10)

    def test_branch_point(self):
        assert numerics_service.lambert_w0(-math.exp(-1.0)) == pytest.approx(-1.0, abs=1e-6)

    def test_below_branch_point_rejected(self):
        with pytest.raises(DomainError):
            numerics_service.lambert_w0(-0.5)

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.uniform(-math.exp(-1.0), 0.0, 2000),
                            np.exp(rng.uniform(-20.0, math.log(1e6), 8000))])
        w = numerics_service.lambert_w0(x)
        assert np.all(w >= -1.0)
        assert np.all(np.abs(w * np.exp(w) - x) <= 1e-10 * np.maximum(1.0, np.abs(x)))

    def test_matches_scipy(self):
        x = np.array([-0.3, -0.1, 0.5, 3.0, 50.0, 1e5])
        assert np.allclose(numerics_service.lambert_w0(x), special.lambertw(x).real, rtol=1e-10, atol=1e-12)


class TestDigamma:

    @pytest.mark.parametrize("x, expected", [(1.0, -0.5772156649), (2.0, 0.4227843351),
                                             (0.5, -1.9635100260)])
    def test_known_values(self, x, expected):
        assert numerics_service.digamma(x) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0, 5.0])
    def test_recurrence(self, x):
        assert numerics_service.digamma(x + 1) - numerics_service.digamma(x) == pytest.approx(1.0 / x, abs=1e-9)

    def test_finite_difference_of_log_gamma(self):
        h = 1e-5
        x = 3.7
        fd = (special.gammaln(x + h) - special.gammaln(x - h)) / (2 * h)
        assert numerics_service.digamma(x) == pytest.approx(fd, abs=1e-8)

    @pytest.mark.parametrize("x", [0.0, -1.0])
    def test_non_positive_rejected(self, x):
        with pytest.raises(DomainError):
            numerics_service.digamma(x)


class TestScalarRoot:

    def test_harvest_stationarity(self):
        X = 10.0

        def f(z):
            return z * math.log(z) - z - X + 1.0

        z = numerics_service.solve_scalar_root(f, RootBracket(1.0, 50.0), tol=1e-12)
        assert abs(f(z)) < 1e-9
        assert (z - 1.0) / (X + z - 1.0) == pytest.approx(0.4177, abs=5e-4)

    def test_linear(self):
        assert numerics_service.solve_scalar_root(lambda x: x - 1.0, RootBracket(0.0, 2.0)) == pytest.approx(1.0)

    def test_no_sign_change(self):
        with pytest.raises(BracketError):
            numerics_service.solve_scalar_root(lambda x: x * x, RootBracket(-1.0, 1.0))

    def test_endpoint_root_returned(self):
        assert numerics_service.solve_scalar_root(lambda x: x, RootBracket(0.0, 1.0)) == 0.0

    def test_non_finite_end(self):
        with pytest.raises(BracketError):
            numerics_service.solve_scalar_root(lambda x: math.inf if x > 0.5 else -1.0, RootBracket(0.0, 1.0))

    def test_degenerate_bracket_rejected(self):
        with pytest.raises(DomainError):
            RootBracket(1.0, 1.0)

    def test_expand_bracket(self):
        bracket = numerics_service.expand_bracket(lambda x: x - 100.0, 1.0, 2.0)
        assert bracket.lo <= 100.0 <= bracket.hi


class TestLinearProgram:

    def test_single_bound(self):
        lp = LinearProgram(objective=[1.0], constraints=[LinearConstraint([1.0], '<=', 1.0)])
        result = numerics_service.solve_lp(lp)
        assert result.status == 'optimal'
        assert result.objective == pytest.approx(1.0)
        assert result.point[0] == pytest.approx(1.0)

    def test_degenerate_face(self):
        lp = LinearProgram(objective=[1.0, 1.0], constraints=[LinearConstraint([1.0, 1.0], '<=', 1.0)])
        result = numerics_service.solve_lp(lp)
        assert result.objective == pytest.approx(1.0)
        assert result.point.sum() == pytest.approx(1.0)

    def test_infeasible(self):
        lp = LinearProgram(objective=[1.0], constraints=[LinearConstraint([1.0], '<=', 1.0),
                                                          LinearConstraint([1.0], '>=', 2.0)])
        assert numerics_service.solve_lp(lp).status == 'infeasible'

    def test_unbounded(self):
        lp = LinearProgram(objective=[1.0, 0.0], constraints=[LinearConstraint([0.0, 1.0], '<=', 1.0)])
        assert numerics_service.solve_lp(lp).status == 'unbounded'

    def test_equality_and_free_variable(self):
        lp = LinearProgram(objective=[-1.0, 0.0],
                           constraints=[LinearConstraint([1.0, 1.0], '=', 1.0),
                                        LinearConstraint([0.0, 1.0], '<=', 3.0)],
                           lower=[-np.inf, 0.0], upper=[np.inf, np.inf])
        result = numerics_service.solve_lp(lp)
        assert result.status == 'optimal'
        assert result.point == pytest.approx([-2.0, 3.0])

    def test_dimension_mismatch(self):
        lp = LinearProgram(objective=[1.0, 1.0], constraints=[LinearConstraint([1.0], '<=', 1.0)])
        with pytest.raises(DomainError):
            numerics_service.solve_lp(lp)

    def test_nan_rejected(self):
        lp = LinearProgram(objective=[float('nan')])
        with pytest.raises(DomainError):
            numerics_service.solve_lp(lp)

    def test_random_instances_match_linprog(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            m, n = rng.integers(2, 6), rng.integers(2, 6)
            A = rng.uniform(0.1, 1.0, (m, n))
            b = rng.uniform(1.0, 2.0, m)
            c = rng.uniform(0.0, 1.0, n)
            lp = LinearProgram(objective=list(c),
                               constraints=[LinearConstraint(list(row), '<=', float(v)) for row, v in zip(A, b)])
            result = numerics_service.solve_lp(lp)
            reference = optimize.linprog(-c, A_ub=A, b_ub=b, bounds=[(0, None)] * n, method='highs')
            assert result.status == 'optimal'
            assert result.objective == pytest.approx(-reference.fun, abs=1e-7)
            assert np.all(A @ result.point <= b + 1e-9)
            # no sampled feasible point does better
            samples = rng.uniform(0.0, 2.0, (1000, n))
            feasible = samples[np.all(samples @ A.T <= b, axis=1)]
            if feasible.size:
                assert np.max(feasible @ c) <= result.objective + 1e-7


class TestConcaveMaximization:

    def test_unconstrained_quadratic(self):
        problem = ConcaveProblem(objective=lambda x: (-float(x[0] ** 2), np.array([-2.0 * x[0]])),
                                 constraints=[], lower=[-1.0], upper=[1.0], x0=[0.7])
        point, value, report = numerics_service.maximize_concave(problem)
        assert point[0] == pytest.approx(0.0, abs=1e-6)
        assert value == pytest.approx(0.0, abs=1e-10)
        assert report.status == 'optimal'

    def test_active_constraint(self):
        problem = ConcaveProblem(objective=lambda x: (math.log(x[0]), np.array([1.0 / x[0]])),
                                 constraints=[lambda x: (float(x[0] - 2.0), np.array([1.0]))],
                                 lower=[1e-9], upper=[10.0], x0=[0.5])
        point, value, report = numerics_service.maximize_concave(problem)
        assert point[0] == pytest.approx(2.0, abs=1e-6)
        assert value == pytest.approx(math.log(2.0), abs=1e-6)

    def test_log_sum_exp_instance_matches_grid(self):
        # max x + 2y s.t. log(e^x + e^y) <= 1 on [-3, 1]^2
        def lse(v):
            e = np.exp(v)
            return float(math.log(e.sum()) - 1.0), e / e.sum()

        problem = ConcaveProblem(objective=lambda v: (float(v[0] + 2 * v[1]), np.array([1.0, 2.0])),
                                 constraints=[lse], lower=[-3.0, -3.0], upper=[1.0, 1.0])
        point, value, report = numerics_service.maximize_concave(problem)
        # along the boundary y = log(e - e^x), capped by the box
        x = np.arange(-3.0, 1.0 - 1e-4, 1e-4)
        y = np.minimum(np.log(math.e - np.exp(x)), 1.0)
        keep = y >= -3.0
        oracle = float(np.max(x[keep] + 2 * y[keep]))
        assert value == pytest.approx(oracle, abs=1e-3)
        assert lse(point)[0] <= 1e-6

    def test_best_value_history_is_monotone(self):
        problem = ConcaveProblem(objective=lambda x: (-float(np.sum((x - 0.3) ** 2)), -2.0 * (x - 0.3)),
                                 constraints=[lambda x: (float(x.sum() - 0.5), np.ones(2))],
                                 lower=[0.0, 0.0], upper=[1.0, 1.0], x0=[0.0, 0.0])
        _, _, report = numerics_service.maximize_concave(problem)
        history = [v for v in report.objective_history if np.isfinite(v)]
        assert all(b >= a for a, b in zip(history, history[1:]))


class TestGridSearch:

    def test_single_user_throughput(self):
        x, _ = numerics_service.grid_argmax(lambda T: harvest_service.throughput_single(10.0, T), 0.01, 0.99, 1e-4)
        assert x == pytest.approx(0.4177, abs=1e-3)

    def test_constant_picks_lowest(self):
        assert numerics_service.grid_argmax(lambda x: 1.0, 0.0, 1.0, 0.1)[0] == 0.0

    def test_grid_hit(self):
        assert numerics_service.grid_argmax(lambda x: -(x - 0.5) ** 2, 0.0, 1.0, 0.25)[0] == pytest.approx(0.5)

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            numerics_service.grid_argmax(lambda x: math.nan, 0.0, 1.0, 0.5)


class TestDualDecomposition:

    def test_project_simplex(self):
        out = numerics_service.project_simplex(np.array([0.7, 0.6, -0.2]))
        assert out == pytest.approx([0.7, 0.3, 0.0])
        assert out.sum() == pytest.approx(1.0)

    def test_subgradient_converges(self):
        # price lam for max ln x s.t. x <= 1: x(lam) = 1 / lam, optimum lam = 1
        def layer1(lam):
            x = 1.0 / lam[0]
            return x, np.array([1.0 - x])

        config = SubgradientConfig(step_scale=1.0, max_iterations=2000, tolerance=1e-7)
        lam, x, report = numerics_service.run_subgradient(layer1, np.array([0.5]), config,
                                                          project=lambda v: np.maximum(v, 1e-3))
        assert report.status == 'optimal'
        assert lam[0] == pytest.approx(1.0, abs=1e-5)
        assert report.residuals[-1] <= 1e-7

    def test_domain_error_halves_step(self):
        def layer1(lam):
            if lam[0] > 2.0:
                raise DomainError("price too high")
            x = 1.0 / lam[0]
            return x, np.array([1.0 - x])

        config = SubgradientConfig(step_scale=10.0, max_iterations=2000, tolerance=1e-7)
        lam, _, report = numerics_service.run_subgradient(layer1, np.array([0.5]), config,
                                                          project=lambda v: np.maximum(v, 1e-3))
        assert report.step_halvings >= 1
        assert lam[0] == pytest.approx(1.0, abs=1e-4)

    def test_step_schedule_default(self):
        config = SubgradientConfig()
        assert config.step(1) == pytest.approx(0.1)
        assert config.step(4) == pytest.approx(0.05)

    @pytest.mark.parametrize("kwargs", [{'tolerance': 0.0}, {'max_iterations': 0}, {'step_scale': -1.0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(DomainError):
            SubgradientConfig(**kwargs)

    def test_custom_schedule_accepted(self):
        config = SubgradientConfig(step_schedule=lambda k: 1.0 / k)
        assert config.step(4) == pytest.approx(0.25)

    @pytest.mark.parametrize("schedule", [lambda k: 0.1 * k, lambda k: 0.0, lambda k: -1.0 / k,
                                          lambda k: 1.0 if k % 2 else 0.5])
    def test_invalid_schedule(self, schedule):
        with pytest.raises(DomainError):
            SubgradientConfig(step_schedule=schedule)


class TestQuasiNewtonDual:

    @staticmethod
    def log_dual(lam):
        # max ln x s.t. x <= 1: x(lam) = 1 / lam, optimum lam = 1
        value, inverse = neg_log(lam[0], 1e-9)
        return float(value) - 1.0 + lam[0], np.array([1.0 - float(inverse)]), float(inverse)

    def test_converges(self):
        config = SubgradientConfig(max_iterations=200, tolerance=1e-8)
        lam, x, report = numerics_service.minimize_dual(self.log_dual, np.array([0.5]), config)
        assert report.status == 'optimal'
        assert lam[0] == pytest.approx(1.0, abs=1e-6)
        assert x == pytest.approx(1.0, abs=1e-6)
        assert report.extra['dual_value'] == pytest.approx(0.0, abs=1e-10)
        assert report.residuals[-1] <= 1e-8

    def test_exhausted_budget_is_reported(self):
        config = SubgradientConfig(max_iterations=1, tolerance=1e-14)
        _, _, report = numerics_service.minimize_dual(self.log_dual, np.array([0.05]), config)
        assert report.status == 'not_converged'
        assert report.iterations <= 1

    def test_respects_bounds(self):
        config = SubgradientConfig(max_iterations=200, tolerance=1e-8)
        lam, x, report = numerics_service.minimize_dual(self.log_dual, np.array([3.0]), config,
                                                        lower=np.array([2.0]))
        assert lam[0] == pytest.approx(2.0)
        assert x == pytest.approx(0.5)
        assert report.status == 'not_converged'


class TestNegLog:

    def test_above_floor(self):
        value, inverse = neg_log(2.0, 1e-9)
        assert float(value) == pytest.approx(-math.log(2.0))
        assert float(inverse) == pytest.approx(0.5)

    def test_linear_below_floor(self):
        value, inverse = neg_log(np.array([0.1, 0.05, 0.0]), 0.1)
        assert value.tolist() == pytest.approx([-math.log(0.1), -math.log(0.1) + 0.5, -math.log(0.1) + 1.0])
        assert inverse.tolist() == pytest.approx([10.0, 10.0, 10.0])
