# services/propfair_service.py
"""
Proportional fairness: maximize sum ln R_n for TDMA and for NOMA with
time sharing, plus grid oracles for both.
"""

import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize

from models.allocation import PFSolution
from models.optimization import RootBracket, SolverReport, SubgradientConfig
from models.scenario import NetworkScenario
from services.errors import DomainError
from services.harvest_service import harvest_service
from services.noma_service import stationary_T, tail_capacity
from services.numerics_service import neg_log, numerics_service
from services.tdma_service import tdma_service

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
_FLOOR = 1e-12
_NU_FLOOR = 1e-12
_LOG_X_RANGE = (-60.0, 60.0)


def _slot_gain(x: np.ndarray) -> np.ndarray:
    """h(x) = x [1 - x / ((1 + x) ln(1 + x))], increasing from 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-4
    xs = x[small]
    out[small] = xs ** 2 / 2.0 - 5.0 * xs ** 3 / 12.0
    xl = x[~small]
    out[~small] = xl - xl ** 2 / ((1.0 + xl) * np.log1p(xl))
    return out


def _invert_slot_gain(target: np.ndarray) -> np.ndarray:
    lo = np.full(target.shape, _LOG_X_RANGE[0])
    hi = np.full(target.shape, _LOG_X_RANGE[1])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = _slot_gain(np.exp(mid)) > target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.exp(0.5 * (lo + hi))


def nested_waterfill(caps: np.ndarray) -> np.ndarray:
    """
    Maximize sum ln R_n subject to sum_{i >= k} R_i <= caps[k] for every k.

    The weakest tail with the smallest average cap is equalized first;
    ties go to the shorter tail. The remaining users are filled with the
    caps reduced by what the tail already used.
    """
    caps = np.asarray(caps, dtype=float)
    n = caps.size
    rates = np.zeros(n)
    end, used = n, 0.0
    while end > 0:
        averages = (caps[:end] - used) / (end - np.arange(end))
        best = float(averages.min())
        k = int(np.flatnonzero(averages <= best * (1.0 + 1e-14) + 1e-300)[-1])
        rates[k:end] = max(best, 0.0)
        used = caps[k]
        end = k
    return rates


class PropfairService:

    # ------------------------------------------------------------------
    # TDMA
    # ------------------------------------------------------------------
    def solve_pf_tdma(self, scenario: NetworkScenario,
                      config: Optional[SubgradientConfig] = None) -> PFSolution:
        """
        Dual of max sum ln R_n s.t. R_n <= r_n(T, t): R_n = 1/lambda_n and the
        time split is the lambda-weighted TDMA closed form (Lambert W in
        each user's SNR, a scalar root for the time price mu). Multipliers
        are scaled per user by the sum-throughput rates.
        """
        config = config or SubgradientConfig(max_iterations=300, tolerance=1e-6)
        c = scenario.harvest_coefficients
        n = c.size
        start, _ = tdma_service.solve_sum_throughput(scenario)
        R0 = np.maximum(tdma_service.user_rates_tdma(scenario, start), _FLOOR)

        def dual(nu: np.ndarray):
            allocation, value = tdma_service.weighted_closed_form(scenario, nu / R0)
            rates = tdma_service.user_rates_tdma(scenario, allocation)
            log_terms, inverse = neg_log(nu, _NU_FLOOR)
            objective = float(np.sum(log_terms + np.log(R0) - 1.0)) + value
            return objective, rates / R0 - inverse, allocation

        nu, allocation, report = numerics_service.minimize_dual(
            dual, np.ones(n), config, lower=np.full(n, _NU_FLOOR), label='propfair.tdma')

        lam = nu / R0
        T, t = allocation.T, np.array(allocation.t)
        rates = tdma_service.user_rates_tdma(scenario, allocation)
        objective = float(np.sum(np.log(np.maximum(rates, 1e-300))))
        x = c * T / np.maximum(t, 1e-300)
        mu = float(np.sum(c * lam / ((1.0 + x) * LN2)))
        report.method = 'dual-decomposition'
        logger.debug("pf tdma: T=%.6f objective=%.6f status=%s", T, objective, report.status)
        return PFSolution(T=T, rates=rates, objective=objective, t=t, multipliers=lam, mu=mu,
                          report=report)

    def pf_tdma_at(self, scenario: NetworkScenario, T: float) -> Tuple[float, np.ndarray]:
        """Exact PF slot split at a fixed harvest time. Returns (objective, slots)."""
        if not 0 < T < 1:
            raise DomainError(f"T must lie in (0, 1), got {T}")
        a = scenario.harvest_coefficients * T
        budget = 1.0 - T

        def excess(log_nu: float) -> float:
            x = _invert_slot_gain(math.exp(log_nu) * a)
            return math.log(float(np.sum(a / x))) - math.log(budget)

        log_nu = numerics_service.solve_scalar_root(excess, RootBracket(-120.0, 120.0), tol=1e-12)
        x = _invert_slot_gain(math.exp(log_nu) * a)
        t = a / x
        t *= budget / t.sum()
        rates = t * np.log2(1.0 + a / t)
        return float(np.sum(np.log(rates))), t

    def pf_oracle_tdma(self, scenario: NetworkScenario, T_step: float = 0.01) -> PFSolution:
        """Grid over T with the exact inner slot split, refined between the best grid neighbours."""
        T, objective = self._grid_then_refine(lambda T: self.pf_tdma_at(scenario, T)[0], T_step)
        _, t = self.pf_tdma_at(scenario, T)
        rates = t * np.log2(1.0 + scenario.harvest_coefficients * T / t)
        return PFSolution(T=T, rates=rates, objective=objective, t=t,
                          report=SolverReport(method='grid-oracle'))

    # ------------------------------------------------------------------
    # NOMA with time sharing
    # ------------------------------------------------------------------
    def _tail_sums(self, scenario: NetworkScenario) -> Tuple[np.ndarray, np.ndarray]:
        order = np.argsort(-scenario.gains, kind='stable')
        c = scenario.harvest_coefficients[order]
        return order, np.cumsum(c[::-1])[::-1]

    def pf_noma_at(self, scenario: NetworkScenario, T: float) -> Tuple[float, np.ndarray]:
        """Exact PF rates (strongest user first) at a fixed harvest time."""
        _, S = self._tail_sums(scenario)
        rates = nested_waterfill(tail_capacity(S, T))
        return float(np.sum(np.log(np.maximum(rates, 1e-300)))), rates

    def solve_pf_noma_ts(self, scenario: NetworkScenario,
                         config: Optional[SubgradientConfig] = None) -> PFSolution:
        """
        Only the N weakest-tail capacity constraints are enforced. With
        multiplier lambda_k on the tail that starts at user k (strongest
        first), user n gets R_n = 1 / sum_{k <= n} lambda_k and the common
        harvest time is the root of sum_k lambda_k C_k'(T) = 0. The rates
        are the nested water-filling at the dual's harvest time.
        """
        config = config or SubgradientConfig(max_iterations=300, tolerance=1e-6)
        order, S = self._tail_sums(scenario)
        n = S.size
        T_guess = harvest_service.optimal_T_deterministic(float(S[0]))
        R0 = max(float(tail_capacity(S, T_guess)[0]) / n, _FLOOR)

        def dual(nu: np.ndarray):
            T = stationary_T(S, nu)
            log_terms, inverse = neg_log(np.cumsum(nu), _NU_FLOOR)
            load = np.cumsum((R0 * inverse)[::-1])[::-1]
            caps = tail_capacity(S, T)
            objective = float(np.sum(log_terms)) + n * (math.log(R0) - 1.0) + float(np.dot(nu, caps)) / R0
            return objective, (caps - load) / R0, T

        initial = np.zeros(n)
        initial[0] = 1.0
        nu, T, report = numerics_service.minimize_dual(dual, initial, config, label='propfair.noma_ts')

        objective, sorted_rates = self.pf_noma_at(scenario, T)
        rates = np.empty(n)
        rates[order] = sorted_rates
        report.extra['dual_T'] = T
        report.method = 'dual-decomposition+waterfill'
        logger.debug("pf noma-ts: T=%.6f objective=%.6f status=%s", T, objective, report.status)
        return PFSolution(T=T, rates=rates, objective=objective, multipliers=nu / R0, report=report)

    def pf_oracle_noma(self, scenario: NetworkScenario, T_step: float = 0.01) -> PFSolution:
        """Grid over T; at each grid point the nested water-filling gives the exact rates."""
        order, _ = self._tail_sums(scenario)
        T, objective = self._grid_then_refine(lambda T: self.pf_noma_at(scenario, T)[0], T_step)
        _, sorted_rates = self.pf_noma_at(scenario, T)
        rates = np.empty_like(sorted_rates)
        rates[order] = sorted_rates
        return PFSolution(T=T, rates=rates, objective=objective,
                          report=SolverReport(method='grid-oracle'))

    # ------------------------------------------------------------------
    @staticmethod
    def _grid_then_refine(value: Callable[[float], float], T_step: float) -> Tuple[float, float]:
        if not 0 < T_step <= 0.1:
            raise DomainError(f"T_step must lie in (0, 0.1], got {T_step}")
        T_best, v_best = numerics_service.grid_argmax(value, T_step, 1.0 - T_step, T_step)
        lo, hi = max(T_best - T_step, 1e-9), min(T_best + T_step, 1.0 - 1e-9)
        result = optimize.minimize_scalar(lambda T: -value(T), bounds=(lo, hi), method='bounded',
                                          options={'xatol': 1e-10})
        if -result.fun > v_best:
            return float(result.x), float(-result.fun)
        return T_best, v_best


# Global instance
propfair_service = PropfairService()
