# tests/test_noma.py

import numpy as np
import pytest

from models.allocation import DecodingPermutation, TSConfig
from models.optimization import SubgradientConfig
from services.channel_service import channel_service
from services.errors import DomainError
from services.harvest_service import harvest_service
from services.noma_service import noma_service
from services.tdma_service import tdma_service

DESCENDING = DecodingPermutation((0, 1))
ASCENDING = DecodingPermutation((1, 0))


def random_coefficients(rng, n):
    return sorted(rng.uniform(1.0, 500.0, size=n).tolist(), reverse=True)


class TestRates:

    def test_example1_descending(self, example1):
        T = noma_service.optimal_T_sum(example1)
        rates = noma_service.rate_fixed_order(example1, T, DESCENDING)
        assert rates.tolist() == pytest.approx([0.92253, 4.65538], abs=1e-2)
        assert rates.sum() == pytest.approx(5.5779, abs=1e-3)

    def test_example1_ascending(self, example1):
        T = noma_service.optimal_T_sum(example1)
        rates = noma_service.rate_fixed_order(example1, T, ASCENDING)
        assert rates.tolist() == pytest.approx([4.90526, 0.6726], abs=1e-2)

    def test_zero_harvest_time(self, example1):
        assert noma_service.rate_fixed_order(example1, 0.0, DESCENDING).tolist() == [0.0, 0.0]

    def test_last_decoded_is_interference_free(self, with_coefficients):
        scenario = with_coefficients([30.0, 20.0, 10.0])
        T = 0.3
        rates = noma_service.rate_fixed_order(scenario, T, DecodingPermutation((2, 0, 1)))
        assert rates[1] == pytest.approx(harvest_service.throughput_single(20.0, T), rel=1e-12)

    def test_permutation_length_checked(self, example1):
        with pytest.raises(DomainError):
            noma_service.rate_fixed_order(example1, 0.3, DecodingPermutation((0, 1, 2)))

    def test_invalid_permutation(self):
        with pytest.raises(DomainError):
            DecodingPermutation((0, 0))

    def test_single_row_time_sharing(self, example1):
        ts = TSConfig(A=(ASCENDING,), tau=(1.0,))
        assert noma_service.rate_ts(example1, 0.3, ts).tolist() == pytest.approx(
            noma_service.rate_fixed_order(example1, 0.3, ASCENDING).tolist(), rel=1e-12)

    def test_example1_time_sharing_point(self, example1):
        T = noma_service.optimal_T_sum(example1)
        ts = TSConfig(A=(ASCENDING, DESCENDING), tau=(0.4688, 0.5312))
        assert noma_service.rate_ts(example1, T, ts).tolist() == pytest.approx([2.7891, 2.7891], abs=1e-2)

    def test_decoding_order_invariance(self, with_coefficients):
        rng = np.random.default_rng(21)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            scenario = with_coefficients(random_coefficients(rng, n))
            T = float(rng.uniform(0.05, 0.95))
            permutations = noma_service.all_permutations(n)
            ts = TSConfig(A=tuple(permutations), tau=tuple(rng.dirichlet(np.ones(len(permutations)))))
            total = noma_service.system_throughput(scenario, T)
            assert noma_service.rate_ts(scenario, T, ts).sum() == pytest.approx(total, abs=1e-9)
            for perm in permutations[:5]:
                assert noma_service.rate_fixed_order(scenario, T, perm).sum() == pytest.approx(total, abs=1e-9)


class TestSystemThroughput:

    def test_example1_optimum(self, example1):
        T = noma_service.optimal_T_sum(example1)
        assert T == pytest.approx(0.2042, abs=1e-4)
        assert noma_service.system_throughput(example1, T) == pytest.approx(5.5779, abs=1e-3)

    def test_example2_optimum(self, example2):
        assert noma_service.optimal_T_sum(example2) == pytest.approx(0.1105, abs=1e-4)

    def test_example2_descending_rates(self, example2):
        T = noma_service.optimal_T_sum(example2)
        rates = noma_service.rate_fixed_order(example2, T, DESCENDING)
        assert rates.tolist() == pytest.approx([10.8823, 0.7251], abs=1e-3)

    def test_coincides_with_single_user(self, with_coefficients):
        assert noma_service.optimal_T_sum(with_coefficients([6.0, 4.0])) == pytest.approx(0.4177, abs=1e-4)

    @pytest.mark.parametrize("T", [0.0, 1.0])
    def test_endpoints(self, example1, T):
        assert noma_service.system_throughput(example1, T) == 0.0

    def test_optimum_matches_grid(self, example2):
        grid = np.arange(1e-5, 1.0, 1e-5)
        values = [noma_service.system_throughput(example2, float(T)) for T in grid]
        assert noma_service.optimal_T_sum(example2) == pytest.approx(float(grid[int(np.argmax(values))]), abs=1e-4)


class TestTimeSharingLP:

    def test_example1(self, example1):
        T = noma_service.optimal_T_sum(example1)
        ts, R_min = noma_service.solve_minrate_ts_lp(example1, T, noma_service.all_permutations(2))
        assert R_min == pytest.approx(2.7891, abs=1e-3)
        assert R_min == pytest.approx(noma_service.system_throughput(example1, T) / 2, abs=1e-7)
        fractions = dict(zip((p.order for p in ts.A), ts.tau))
        assert fractions[ASCENDING.order] == pytest.approx(0.4688, abs=2e-3)
        assert fractions[DESCENDING.order] == pytest.approx(0.5312, abs=2e-3)
        assert sum(ts.tau) == pytest.approx(1.0, abs=1e-12)

    def test_single_permutation(self, example1):
        rates = noma_service.rate_fixed_order(example1, 0.3, DESCENDING)
        _, R_min = noma_service.solve_minrate_ts_lp(example1, 0.3, [DESCENDING])
        assert R_min == pytest.approx(rates.min(), rel=1e-9)

    def test_symmetric_users(self, with_coefficients):
        scenario = with_coefficients([50.0, 50.0])
        ts, R_min = noma_service.solve_minrate_ts_lp(scenario, 0.3, noma_service.all_permutations(2))
        assert ts.tau == pytest.approx((0.5, 0.5), abs=1e-7)
        rates = noma_service.rate_ts(scenario, 0.3, ts)
        assert rates[0] == pytest.approx(rates[1], abs=1e-7)

    def test_rejects_duplicates(self, example1):
        with pytest.raises(DomainError):
            noma_service.solve_minrate_ts_lp(example1, 0.3, [DESCENDING, DecodingPermutation((0, 1))])

    def test_rejects_empty_set(self, example1):
        with pytest.raises(DomainError):
            noma_service.solve_minrate_ts_lp(example1, 0.3, [])

    def test_max_min_point_example2(self, example2):
        _, rates = noma_service.max_min_point(example2, 0.46)
        assert rates.tolist() == pytest.approx([7.1242, 1.4223], abs=2e-3)


class TestGreedy:

    def test_example1(self, example1):
        T = noma_service.optimal_T_sum(example1)
        _, R_min, iterations = noma_service.greedy_ts(example1, T, K=10)
        assert R_min == pytest.approx(2.7891, abs=1e-3)
        assert iterations <= 3

    def test_single_user(self, with_coefficients):
        ts, R_min, iterations = noma_service.greedy_ts(with_coefficients([10.0]), 0.4, K=5)
        assert iterations == 1
        assert ts.tau == pytest.approx((1.0,))
        assert R_min == pytest.approx(harvest_service.throughput_single(10.0, 0.4))

    def test_terminates_within_n_plus_one_rounds(self, with_coefficients):
        rng = np.random.default_rng(21)
        for _ in range(200):
            n = int(rng.integers(3, 7))
            scenario = with_coefficients(sorted(rng.uniform(1.0, 1000.0, size=n).tolist(), reverse=True))
            T = float(rng.uniform(0.1, 0.6))
            _, _, iterations = noma_service.greedy_ts(scenario, T, K=50)
            assert iterations <= n + 1

    def test_never_beats_full_lp(self, with_coefficients):
        rng = np.random.default_rng(4)
        for _ in range(20):
            scenario = with_coefficients(random_coefficients(rng, 4))
            T = float(rng.uniform(0.1, 0.6))
            _, exact = noma_service.solve_minrate_ts_lp(scenario, T, noma_service.all_permutations(4))
            _, greedy, _ = noma_service.greedy_ts(scenario, T, K=30)
            _, first = noma_service.solve_minrate_ts_lp(scenario, T, [noma_service.descending_order(scenario)])
            assert first - 1e-9 <= greedy <= exact + 1e-9

    def test_tied_rates_keep_index_order(self):
        rates = np.array([1.0, 2.0, 1.0 + 1e-12, 0.5, 1.0 - 1e-12])
        assert noma_service._greedy_order(rates) == [1, 0, 2, 4, 3]

    def test_monotone_in_rounds(self, with_coefficients):
        rng = np.random.default_rng(6)
        scenario = with_coefficients(random_coefficients(rng, 5))
        values = [noma_service.greedy_ts(scenario, 0.3, K=k)[1] for k in range(1, 8)]
        assert np.all(np.diff(values) >= -1e-9)

    def test_rejects_zero_rounds(self, example1):
        with pytest.raises(DomainError):
            noma_service.greedy_ts(example1, 0.3, K=0)


class TestEqualRate:

    def test_fixed_order_single_user(self, with_coefficients):
        _, R_eq, _ = noma_service.solve_equal_rate_fixed(with_coefficients([10.0]))
        assert R_eq == pytest.approx(harvest_service.throughput_single(10.0, 0.4177), abs=1e-5)

    def test_fixed_order_matches_oracle(self, example1):
        T, R_eq, report = noma_service.solve_equal_rate_fixed(example1)
        grid = np.arange(1e-4, 1.0, 1e-4)
        oracle = max(float(noma_service.rate_fixed_order(example1, float(t), DESCENDING).min()) for t in grid)
        assert R_eq == pytest.approx(oracle, abs=1e-3)
        assert R_eq < 2.7891
        assert np.all(noma_service.rate_fixed_order(example1, T, DESCENDING) >= R_eq - 1e-6)
        assert report.extra['T'] == T

    def test_fixed_order_needs_longer_harvest(self, example1):
        T, _, _ = noma_service.solve_equal_rate_fixed(example1)
        assert T > noma_service.optimal_T_sum(example1)

    def test_fixed_order_reports_exhausted_budget(self, example1):
        budget = SubgradientConfig(max_iterations=1, tolerance=1e-12)
        _, R_eq, report = noma_service.solve_equal_rate_fixed(example1, budget)
        assert report.status == 'not_converged'
        assert not report.converged
        assert R_eq > 0

    def test_time_sharing_reports_exhausted_budget(self, example2):
        budget = SubgradientConfig(max_iterations=1, tolerance=1e-12)
        result = noma_service.solve_scheme(example2, 'd', budget)
        assert result.report.status == 'not_converged'
        assert result.report.extra['R_caps'] > 0

    def test_time_sharing_example1(self, example1):
        T, R_eq, _, report = noma_service.solve_equal_rate_ts(example1)
        assert R_eq == pytest.approx(2.7891, abs=1e-3)
        assert T == pytest.approx(0.2042, abs=1e-3)
        assert report.status == 'optimal'

    def test_time_sharing_example2(self, example2):
        T, R_eq, ts, _ = noma_service.solve_equal_rate_ts(example2)
        assert R_eq == pytest.approx(1.4223, abs=1e-3)
        assert T == pytest.approx(0.46, abs=1e-2)
        assert np.all(noma_service.rate_ts(example2, T, ts) >= R_eq - 1e-6)

    def test_time_sharing_single_user(self, with_coefficients):
        T, R_eq, _, _ = noma_service.solve_equal_rate_ts(with_coefficients([10.0]))
        assert T == pytest.approx(0.4177, abs=1e-4)
        assert R_eq == pytest.approx(harvest_service.throughput_single(10.0, T), rel=1e-9)

    def test_random_instances(self, with_coefficients):
        rng = np.random.default_rng(12)
        for _ in range(5):
            scenario = with_coefficients(random_coefficients(rng, 3))
            T, R_eq, ts, _ = noma_service.solve_equal_rate_ts(scenario)
            rates = noma_service.rate_ts(scenario, T, ts)
            assert np.all(rates >= R_eq - 1e-6)
            assert noma_service.capacity_region_violation(scenario, T, rates) <= 1e-8


class TestSchemes:

    def test_scheme_a(self, example1):
        result = noma_service.solve_scheme(example1, 'a')
        assert result.T == pytest.approx(0.2042, abs=1e-4)
        assert result.objective == pytest.approx(5.5779, abs=1e-3)

    def test_schemes_b_and_d_coincide_on_example1(self, example1):
        b = noma_service.solve_scheme(example1, 'b')
        d = noma_service.solve_scheme(example1, 'd')
        assert b.objective == pytest.approx(2.7891, abs=1e-3)
        assert d.objective == pytest.approx(b.objective, abs=1e-3)

    def test_fixed_never_beats_time_sharing(self, example1, example2):
        for scenario in (example1, example2):
            c = noma_service.solve_scheme(scenario, 'c')
            d = noma_service.solve_scheme(scenario, 'd')
            assert c.objective <= d.objective + 1e-6

    def test_outputs_inside_capacity_region(self, example2):
        for scheme in ('a', 'b', 'd'):
            result = noma_service.solve_scheme(example2, scheme)
            assert noma_service.capacity_region_violation(example2, result.T, result.rates) <= 1e-8

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_random_outputs_inside_capacity_region(self, with_coefficients, n):
        rng = np.random.default_rng(30 + n)
        for _ in range(2):
            scenario = with_coefficients(random_coefficients(rng, n))
            for scheme in ('a', 'b', 'c', 'd'):
                result = noma_service.solve_scheme(scenario, scheme)
                assert noma_service.capacity_region_violation(scenario, result.T, result.rates) <= 1e-8

    def test_unknown_scheme(self, example1):
        with pytest.raises(DomainError):
            noma_service.solve_scheme(example1, 'e')

    def test_noma_equal_rate_at_least_tdma(self, example2):
        _, R_tdma = tdma_service.solve_common_throughput(example2)
        _, R_noma, _, _ = noma_service.solve_equal_rate_ts(example2)
        assert R_noma >= R_tdma - 1e-6


class TestRingTrends:

    TRIALS = 20

    @pytest.mark.parametrize("P0_dbm", [25.0, 30.0, 35.0, 40.0])
    def test_equal_rate_noma_beats_tdma(self, P0_dbm):
        noma, tdma = [], []
        for seed in range(self.TRIALS):
            scenario = channel_service.sample_scenario(3, seed, P0_dbm=P0_dbm)
            noma.append(noma_service.solve_scheme(scenario, 'd').objective)
            tdma.append(tdma_service.solve_common_throughput(scenario)[1])
        assert np.all(np.array(noma) >= np.array(tdma) - 1e-4)
        assert np.mean(noma) > np.mean(tdma)

    def test_noma_fairer_at_sum_throughput(self):
        noma, tdma = [], []
        for seed in range(self.TRIALS):
            scenario = channel_service.sample_scenario(3, seed, P0_dbm=30.0)
            noma.append(noma_service.jain_index(noma_service.solve_scheme(scenario, 'a').rates))
            allocation, _ = tdma_service.solve_sum_throughput(scenario)
            tdma.append(noma_service.jain_index(tdma_service.user_rates_tdma(scenario, allocation)))
        assert np.mean(noma) >= np.mean(tdma)


class TestMetrics:

    @pytest.mark.parametrize("rates, expected", [((1, 1, 1), 1.0), ((1, 0, 0), 1 / 3), ((1, 2, 3), 36 / 42)])
    def test_jain(self, rates, expected):
        assert noma_service.jain_index(rates) == pytest.approx(expected)

    def test_jain_all_zero(self):
        with pytest.raises(DomainError):
            noma_service.jain_index([0.0, 0.0])

    def test_energy_efficiency(self):
        assert noma_service.energy_efficiency_eq(2, 1.0, 1.0, 0.5) == pytest.approx(4.0)
        assert noma_service.energy_efficiency_eq(2, 3.0, 1.0, 0.5) == pytest.approx(12.0)
        with pytest.raises(DomainError):
            noma_service.energy_efficiency_eq(2, 1.0, 1.0, 0.0)
