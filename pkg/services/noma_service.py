# services/noma_service.py
"""
Uplink NOMA for wireless powered networks.

All users transmit at once during 1 - T and the base station decodes
them by SIC. With s = T / (1 - T), the user decoded at position k of a
permutation gets

    R = (1 - T) log2((1 + s * sum of c from k on) / (1 + s * sum of c after k))

so the rates of any order telescope to the system throughput.
"""

import itertools
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from models.allocation import DecodingPermutation, SchemeResult, TSConfig
from models.optimization import (LinearConstraint, LinearProgram, RootBracket, SolverReport,
                                 SubgradientConfig)
from models.scenario import NetworkScenario
from services.errors import BracketError, DomainError, InfeasibleError, UnboundedError
from services.harvest_service import harvest_service
from services.numerics_service import neg_log, numerics_service

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
_TIE = 1e-9
_T_BOUNDS = (1e-9, 1.0 - 1e-9)
_RATE_FLOOR = 1e-12
_NU_FLOOR = 1e-9
MAX_EXHAUSTIVE_USERS = 6
SCHEMES = ('a', 'b', 'c', 'd')


def tail_capacity(S: np.ndarray, T: float) -> np.ndarray:
    """(1 - T) log2(1 + S T / (1 - T)) for each tail sum S."""
    return (1.0 - T) * np.log2(1.0 + S * T / (1.0 - T))


def tail_capacity_slope(S: np.ndarray, T: float) -> np.ndarray:
    u = T / (1.0 - T)
    return -np.log2(1.0 + S * u) + S / ((1.0 + S * u) * (1.0 - T) * LN2)


def stationary_T(S: np.ndarray, weights: np.ndarray) -> float:
    """
    Maximizer over T of sum_k weights_k C(S_k, T).

    The weighted sum must be concave in T, as it is for non-negative
    combinations of per-user NOMA rates.
    """
    def slope(T: float) -> float:
        return float(np.dot(weights, tail_capacity_slope(S, T)))

    try:
        return numerics_service.solve_scalar_root(slope, RootBracket(*_T_BOUNDS), tol=1e-14)
    except BracketError:
        result = optimize.minimize_scalar(lambda T: -float(np.dot(weights, tail_capacity(S, T))),
                                          bounds=_T_BOUNDS, method='bounded',
                                          options={'xatol': 1e-12})
        return float(result.x)


class NomaService:

    # ------------------------------------------------------------------
    # rates
    # ------------------------------------------------------------------
    def rate_fixed_order(self, scenario: NetworkScenario, T: float,
                         perm: DecodingPermutation) -> np.ndarray:
        """Per-user rates (indexed by user) when users are decoded in perm.order."""
        c = scenario.harvest_coefficients
        if len(perm) != c.size:
            raise DomainError(f"permutation covers {len(perm)} users, scenario has {c.size}")
        if not 0 <= T < 1:
            raise DomainError(f"T must lie in [0, 1), got {T}")
        rates = np.zeros(c.size)
        if T == 0:
            return rates
        s = T / (1.0 - T)
        ordered = c[list(perm.order)]
        remaining = np.concatenate([np.cumsum(ordered[::-1])[::-1], [0.0]])
        per_position = (1.0 - T) * (np.log2(1.0 + s * remaining[:-1]) - np.log2(1.0 + s * remaining[1:]))
        rates[list(perm.order)] = per_position
        return rates

    def rate_ts(self, scenario: NetworkScenario, T: float, ts: TSConfig) -> np.ndarray:
        rates = np.zeros(scenario.n_users)
        for perm, tau in zip(ts.A, ts.tau):
            rates += tau * self.rate_fixed_order(scenario, T, perm)
        return rates

    def system_throughput(self, scenario: NetworkScenario, T: float) -> float:
        if not 0 <= T <= 1:
            raise DomainError(f"T must lie in [0, 1], got {T}")
        if T in (0.0, 1.0):
            return 0.0
        X = float(scenario.harvest_coefficients.sum())
        return (1.0 - T) * math.log2(1.0 + X * T / (1.0 - T))

    def optimal_T_sum(self, scenario: NetworkScenario) -> float:
        X = float(scenario.harvest_coefficients.sum())
        if not X > 0:
            raise DomainError("sum of harvest coefficients must be positive")
        return harvest_service.optimal_T_deterministic(X)

    def subset_capacity(self, scenario: NetworkScenario, T: float, users: Sequence[int]) -> float:
        c = scenario.harvest_coefficients
        if T <= 0:
            return 0.0
        return (1.0 - T) * math.log2(1.0 + T * float(c[list(users)].sum()) / (1.0 - T))

    def capacity_region_violation(self, scenario: NetworkScenario, T: float,
                                  rates: Sequence[float]) -> float:
        """Largest excess of a subset's rate sum over its capacity bound (<= 0 means inside)."""
        rates = np.asarray(rates, dtype=float)
        worst = -math.inf
        n = scenario.n_users
        for size in range(1, n + 1):
            for subset in itertools.combinations(range(n), size):
                excess = float(rates[list(subset)].sum()) - self.subset_capacity(scenario, T, subset)
                worst = max(worst, excess)
        return worst

    def descending_order(self, scenario: NetworkScenario) -> DecodingPermutation:
        return DecodingPermutation(tuple(int(i) for i in np.argsort(-scenario.gains, kind='stable')))

    # ------------------------------------------------------------------
    # time sharing
    # ------------------------------------------------------------------
    def solve_minrate_ts_lp(self, scenario: NetworkScenario, T: float,
                            permutations: Sequence[DecodingPermutation]) -> Tuple[TSConfig, float]:
        """
        max R_min over (tau, R_min) with sum_m tau_m r_n(m) >= R_min for
        every user and sum tau <= 1. The returned tau is rescaled to sum 1.
        """
        permutations = list(permutations)
        if not permutations:
            raise DomainError("need at least one permutation")
        if len({p.order for p in permutations}) != len(permutations):
            raise DomainError("duplicate permutations in the time-sharing set")
        table = np.array([self.rate_fixed_order(scenario, T, p) for p in permutations])
        m, n = table.shape
        constraints = [LinearConstraint(coefficients=list(table[:, user]) + [-1.0], sense='>=', rhs=0.0)
                       for user in range(n)]
        constraints.append(LinearConstraint(coefficients=[1.0] * m + [0.0], sense='<=', rhs=1.0))
        lp = LinearProgram(objective=[0.0] * m + [1.0], constraints=constraints)
        result = numerics_service.solve_lp(lp)
        if result.status == 'infeasible':
            raise InfeasibleError("time-sharing LP has no feasible point")
        if result.status == 'unbounded':
            raise UnboundedError("time-sharing LP is unbounded")
        tau = np.maximum(result.point[:m], 0.0)
        total = tau.sum()
        tau = tau / total if total > 0 else np.full(m, 1.0 / m)
        ts = TSConfig(A=tuple(permutations), tau=tuple(tau))
        R_min = float(self.rate_ts(scenario, T, ts).min())
        return ts, R_min

    def greedy_ts(self, scenario: NetworkScenario, T: float, K: int) -> Tuple[TSConfig, float, int]:
        """
        Greedy construction of a small time-sharing set.

        Starts from the descending-gain order. Each round solves the LP on
        the current set, then appends the order that decodes users by
        descending current rate. Users whose rates tie within 1e-9 keep
        their index order. Stops on a repeated order or after K rounds.
        """
        if K < 1:
            raise DomainError(f"K must be at least 1, got {K}")
        permutations = [self.descending_order(scenario)]
        ts, R_min = None, -math.inf
        for iteration in range(1, K + 1):
            ts, R_min = self.solve_minrate_ts_lp(scenario, T, permutations)
            candidate = DecodingPermutation(tuple(self._greedy_order(self.rate_ts(scenario, T, ts))))
            logger.debug("greedy_ts: iteration %d R_min=%.8f next=%s", iteration, R_min, candidate.order)
            if candidate.order in {p.order for p in permutations} or iteration == K:
                return ts, R_min, iteration
            permutations.append(candidate)
        return ts, R_min, K

    @staticmethod
    def _greedy_order(rates: np.ndarray) -> List[int]:
        """Users by descending rate; a run of rates within the tie tolerance stays in index order."""
        by_rate = sorted(range(rates.size), key=lambda u: -rates[u])
        order: List[int] = []
        i = 0
        while i < len(by_rate):
            j = i + 1
            while j < len(by_rate) and rates[by_rate[i]] - rates[by_rate[j]] <= _TIE:
                j += 1
            order.extend(sorted(by_rate[i:j]))
            i = j
        return order

    def all_permutations(self, n_users: int) -> List[DecodingPermutation]:
        return [DecodingPermutation(p) for p in itertools.permutations(range(n_users))]

    def max_min_point(self, scenario: NetworkScenario, T: float) -> Tuple[TSConfig, np.ndarray]:
        """Max-min operating point of the capacity region at T, over every decoding order."""
        if scenario.n_users > MAX_EXHAUSTIVE_USERS:
            ts, _, _ = self.greedy_ts(scenario, T, scenario.n_users + 1)
        else:
            ts, _ = self.solve_minrate_ts_lp(scenario, T, self.all_permutations(scenario.n_users))
        return ts, self.rate_ts(scenario, T, ts)

    # ------------------------------------------------------------------
    # equal-rate schemes
    # ------------------------------------------------------------------
    def _sorted_tails(self, scenario: NetworkScenario) -> np.ndarray:
        """Tail sums of the harvest coefficients, strongest user first."""
        c = scenario.harvest_coefficients[list(self.descending_order(scenario).order)]
        return np.cumsum(c[::-1])[::-1]

    def solve_equal_rate_fixed(self, scenario: NetworkScenario,
                               config: Optional[SubgradientConfig] = None
                               ) -> Tuple[float, float, SolverReport]:
        """
        Equal rate with the fixed descending decoding order.

        The user decoded at position k gets C(S_k) - C(S_k+1) where S_k is
        the tail sum from k on, so every constraint is concave in T. The
        harvest time and R_eq come from the dual loop; R_eq is the smallest
        user rate at the dual's harvest time.
        """
        S = self._sorted_tails(scenario)
        n = S.size
        M = np.eye(n) - np.eye(n, k=1)
        T, R_eq, report = self._dual_equal_rate(S, M, config, 'noma.equal_rate_fixed')
        logger.debug("equal rate (fixed order): T=%.6f R_eq=%.6f status=%s", T, R_eq, report.status)
        return T, R_eq, report

    def tail_caps(self, scenario: NetworkScenario, T: float) -> np.ndarray:
        """Per-user equal-rate caps C_n(T) / (N + 1 - n) from the weakest-tail subsets."""
        S = self._sorted_tails(scenario)
        return tail_capacity(S, T) / (S.size - np.arange(S.size))

    def solve_equal_rate_ts(self, scenario: NetworkScenario,
                            config: Optional[SubgradientConfig] = None
                            ) -> Tuple[float, float, TSConfig, SolverReport]:
        """
        Equal rate with time sharing.

        The harvest time comes from the dual loop over the N nested
        weakest-tail caps; the time-sharing vector then comes from the
        greedy LP at that T, falling back to every decoding order if the
        greedy set falls short. The returned R_eq is the smallest user
        rate the time-sharing vector delivers.
        """
        S = self._sorted_tails(scenario)
        n = S.size
        T, R_caps, report = self._dual_equal_rate(S, np.diag(1.0 / (n - np.arange(n))), config,
                                                  'noma.equal_rate_ts')
        ts, R_min, _ = self.greedy_ts(scenario, T, n + 1)
        if R_min < R_caps - 1e-9 and n <= MAX_EXHAUSTIVE_USERS:
            logger.warning("greedy time sharing short by %.3e; using every decoding order", R_caps - R_min)
            ts, R_min = self.solve_minrate_ts_lp(scenario, T, self.all_permutations(n))
        report.extra['R_caps'] = R_caps
        logger.debug("equal rate (TS): T=%.6f caps=%.6f R_min=%.6f status=%s", T, R_caps, R_min,
                     report.status)
        return T, R_min, ts, report

    def _dual_equal_rate(self, S: np.ndarray, M: np.ndarray, config: Optional[SubgradientConfig],
                         label: str) -> Tuple[float, float, SolverReport]:
        """
        Dual of max ln R s.t. R <= f_n(T), with f = M @ C(S, T).

        For multipliers lambda the Layer-1 maximizers are R = 1 / sum(lambda)
        and the root in T of sum_n lambda_n f_n'(T). The loop runs on
        nu = lambda * R0 where R0 is the smallest f_n at the sum-throughput
        harvest time.
        """
        config = config or SubgradientConfig(max_iterations=300, tolerance=1e-6)
        n = M.shape[0]
        T0 = harvest_service.optimal_T_deterministic(float(S[0]))
        R0 = max(float((M @ tail_capacity(S, T0)).min()), _RATE_FLOOR)

        def dual(nu: np.ndarray):
            T = stationary_T(S, M.T @ nu)
            rates = M @ tail_capacity(S, T)
            value, inverse = neg_log(float(nu.sum()), _NU_FLOOR)
            R = R0 * float(inverse)
            objective = float(value) + math.log(R0) - 1.0 + float(np.dot(nu, rates)) / R0
            return objective, (rates - R) / R0, (T, R)

        _, (T, R_dual), report = numerics_service.minimize_dual(dual, np.full(n, 1.0 / n), config,
                                                                label=label)
        rates = M @ tail_capacity(S, T)
        report.method = 'dual-decomposition'
        report.extra['T'] = T
        report.extra['dual_R_eq'] = R_dual
        return T, float(rates.min()), report

    # ------------------------------------------------------------------
    # schemes and metrics
    # ------------------------------------------------------------------
    def solve_scheme(self, scenario: NetworkScenario, scheme: str,
                     config: Optional[SubgradientConfig] = None) -> SchemeResult:
        """
        (a) descending order at the sum-throughput T*; (b) time sharing at
        T*; (c) equal rate with the fixed order; (d) equal rate with time
        sharing.
        """
        if scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        n = scenario.n_users
        if scheme in ('a', 'b'):
            T = self.optimal_T_sum(scenario)
            if scheme == 'a':
                rates = self.rate_fixed_order(scenario, T, self.descending_order(scenario))
                return SchemeResult(scheme, T, rates, float(rates.sum()))
            if n <= MAX_EXHAUSTIVE_USERS:
                ts, R_min = self.solve_minrate_ts_lp(scenario, T, self.all_permutations(n))
            else:
                ts, R_min, _ = self.greedy_ts(scenario, T, n + 1)
            return SchemeResult(scheme, T, self.rate_ts(scenario, T, ts), R_min, ts=ts)
        if scheme == 'c':
            T, R_eq, report = self.solve_equal_rate_fixed(scenario, config)
        T, R_eq, ts, report = self.solve_equal_rate_ts(scenario, config)
        return SchemeResult(scheme, T, self.rate_ts(scenario, T, ts), R_eq, ts=ts, report=report)

    def jain_index(self, rates: Sequence[float]) -> float:
        r = np.asarray(rates, dtype=float)
        if r.size == 0 or not np.any(r != 0):
            raise DomainError("Jain's index needs at least one non-zero rate")
        return float(r.sum() ** 2 / (r.size * np.sum(r ** 2)))

    def energy_efficiency_eq(self, N: int, R_eq: float, P0: float, T: float) -> float:
        if not T > 0:
            raise DomainError(f"T must be positive, got {T}")
        if not P0 > 0:
            raise DomainError(f"P0 must be positive, got {P0}")
        return N * R_eq / (P0 * T)


# Global instance
noma_service = NomaService()
