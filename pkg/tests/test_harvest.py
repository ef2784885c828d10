# tests/test_harvest.py

import math

import numpy as np
import pytest

from models.optimization import RootBracket
from models.scenario import Deterministic, GammaStochastic
from services.errors import DomainError
from services.harvest_service import harvest_service
from services.numerics_service import numerics_service


def grid_optimum(X, step=1e-5):
    grid = np.arange(step, 1.0, step)
    values = (1.0 - grid) * np.log2(1.0 + X * grid / (1.0 - grid))
    return float(grid[int(np.argmax(values))])


class TestThroughput:

    def test_zero_harvest_time(self):
        assert harvest_service.throughput_single(10.0, 0.0) == 0.0

    def test_vanishes_near_full_harvest(self):
        assert harvest_service.throughput_single(10.0, 1.0 - 1e-12) < 1e-9

    def test_known_value(self):
        assert harvest_service.throughput_single(10.0, 0.4177) == pytest.approx(1.7649, abs=1e-4)

    @pytest.mark.parametrize("T", [-0.1, 1.0, 1.5])
    def test_T_out_of_range(self, T):
        with pytest.raises(DomainError):
            harvest_service.throughput_single(10.0, T)

    def test_non_positive_snr(self):
        with pytest.raises(DomainError):
            harvest_service.throughput_single(0.0, 0.5)

    def test_concave_in_T(self):
        rng = np.random.default_rng(5)
        h = 1e-3
        grid = np.arange(0.01, 0.99, 0.01)
        for X in rng.uniform(0.1, 1000.0, size=100):
            f = [harvest_service.throughput_single(float(X), float(T)) for T in (grid - h)]
            g = [harvest_service.throughput_single(float(X), float(T)) for T in grid]
            k = [harvest_service.throughput_single(float(X), float(T)) for T in (grid + h)]
            second = np.array(f) - 2 * np.array(g) + np.array(k)
            assert np.all(second <= 1e-12)


class TestDeterministic:

    @pytest.mark.parametrize("X, expected", [(10.0, 0.4177), (20.0, 0.3645)])
    def test_reported_optima(self, X, expected):
        assert harvest_service.optimal_T_deterministic(X) == pytest.approx(expected, abs=1e-4)

    def test_unit_snr_limit(self):
        assert harvest_service.optimal_T_deterministic(1.0) == pytest.approx(1.0 - 1.0 / math.e, abs=1e-12)

    def test_continuous_around_unit_snr(self):
        near = harvest_service.optimal_T_deterministic(1.0 + 1e-6)
        assert near == pytest.approx(1.0 - 1.0 / math.e, abs=1e-6)

    @pytest.mark.parametrize("X", [0.5, 1.0, 2.0, 10.0, 20.0, 100.0])
    def test_matches_grid(self, X):
        assert harvest_service.optimal_T_deterministic(X) == pytest.approx(grid_optimum(X), abs=1e-4)

    def test_vectorized(self):
        X = np.array([[0.5, 10.0], [20.0, 100.0]])
        T = harvest_service.optimal_T_deterministic(X)
        assert T.shape == (2, 2)
        assert T[0, 1] == pytest.approx(0.4177, abs=1e-4)
        assert np.all((T > 0) & (T < 1))

    def test_rejects_non_positive(self):
        with pytest.raises(DomainError):
            harvest_service.optimal_T_deterministic(np.array([1.0, -2.0]))

    def test_dispatch(self):
        assert harvest_service.optimal_T(Deterministic(10.0)) == pytest.approx(0.4177, abs=1e-4)


class TestStochastic:

    @pytest.mark.parametrize("kappa, zeta, expected", [(1.0, 1.0, 0.8522), (2.0, 2.0, 0.6207)])
    def test_high_snr_closed_form(self, kappa, zeta, expected):
        assert harvest_service.optimal_T_stochastic_high_snr(kappa, zeta) == pytest.approx(expected, abs=1e-4)

    def test_closed_form_by_root_oracle(self):
        kappa, zeta = 3.0, 5.0
        a = zeta * math.exp(numerics_service.digamma(kappa) - 1.0)
        w = numerics_service.solve_scalar_root(lambda x: x * math.exp(x) - a, RootBracket(0.0, a))
        assert harvest_service.optimal_T_stochastic_high_snr(kappa, zeta) == pytest.approx(1.0 / (w + 1.0), rel=1e-8)

    def test_small_scale_tends_to_one(self):
        assert harvest_service.optimal_T_stochastic_high_snr(1.0, 1e-9) == pytest.approx(1.0, abs=1e-6)

    def test_dispatch(self):
        assert harvest_service.optimal_T(GammaStochastic(1.0, 1.0)) == pytest.approx(0.8522, abs=1e-4)

    @pytest.mark.parametrize("kappa, zeta, T, expected", [
        (1.0, 1.0, 0.5, 0.5 / math.log(2.0)),
        (1.0, 1.0, 0.0, 0.0),
        (2.0, 3.0, 1.0, 6.0 / math.log(2.0)),
    ])
    def test_low_snr_mean(self, kappa, zeta, T, expected):
        assert harvest_service.expected_throughput_low_snr(kappa, zeta, T) == pytest.approx(expected)

    @pytest.mark.parametrize("kappa, zeta", [(0.0, 1.0), (1.0, -2.0), (-1.0, -1.0)])
    def test_low_snr_mean_rejects_bad_shape(self, kappa, zeta):
        with pytest.raises(DomainError):
            harvest_service.expected_throughput_low_snr(kappa, zeta, 0.5)

    def test_policy_ordering(self):
        kappa, zeta = 2.0, 50.0
        per_sample = harvest_service.expected_throughput_mc(kappa, zeta, 'optimal', samples=10000, seed=3)
        fixed = harvest_service.expected_throughput_mc(kappa, zeta, 'fixed', samples=10000, seed=3)
        half = harvest_service.expected_throughput_mc(kappa, zeta, 'half', samples=10000, seed=3)
        assert per_sample >= fixed >= half

    def test_numeric_optimum_beats_closed_form(self):
        kappa, zeta = 2.0, 50.0
        T_numeric = harvest_service.optimal_T_stochastic_numeric(kappa, zeta, samples=10000, seed=3)
        best = harvest_service.expected_throughput_mc(kappa, zeta, 'fixed', samples=10000, seed=3, T=T_numeric)
        closed = harvest_service.expected_throughput_mc(kappa, zeta, 'fixed', samples=10000, seed=3)
        assert best >= closed - 1e-12

    def test_unknown_policy(self):
        with pytest.raises(DomainError):
            harvest_service.expected_throughput_mc(1.0, 1.0, policy='greedy')
