# services/tdma_service.py
"""
Multi-user TDMA uplink for the harvest-then-transmit protocol.

User n transmits for t_n after the common harvest phase T, reaching
R_n = t_n log2(1 + c_n T / t_n) with c_n = eta * rho0 * g_n.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from models.allocation import RateProfile, TimeAllocation
from models.optimization import ConcaveProblem, RootBracket, SolverReport, SubgradientConfig
from models.scenario import NetworkScenario
from services.errors import DomainError
from services.numerics_service import neg_log, numerics_service

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
_FLOOR = 1e-12
_NU_FLOOR = 1e-12


def _slot_rates(c: np.ndarray, T: float, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    rates = np.zeros_like(t)
    live = t > 0
    rates[live] = t[live] * np.log2(1.0 + c[live] * T / t[live])
    return rates


class TdmaService:

    def user_rate_tdma(self, scenario: NetworkScenario, T: float, t_n: float, n: int) -> float:
        if not 0 < T < 1:
            raise DomainError(f"T must lie in (0, 1), got {T}")
        if t_n < 0:
            raise DomainError(f"slot length must be non-negative, got {t_n}")
        if t_n == 0:
            return 0.0
        c = scenario.harvest_coefficients[n]
        return t_n * math.log2(1.0 + c * T / t_n)

    def user_rates_tdma(self, scenario: NetworkScenario, allocation: TimeAllocation) -> np.ndarray:
        return _slot_rates(scenario.harvest_coefficients, allocation.T, np.array(allocation.t))

    # ------------------------------------------------------------------
    def solve_sum_throughput(self, scenario: NetworkScenario) -> Tuple[TimeAllocation, float]:
        """
        Sum-throughput optimum: z* solves z ln z - z - X + 1 = 0 with
        X = eta rho0 sum(g); then T* = (z*-1)/(X+z*-1) and
        t_n* = c_n/(X+z*-1), which uses the whole slot.
        """
        c = scenario.harvest_coefficients
        X = float(c.sum())

        def stationarity(z: float) -> float:
            return z * math.log(z) - z - X + 1.0

        bracket = numerics_service.expand_bracket(stationarity, 1.0, 2.0)
        z = numerics_service.solve_scalar_root(stationarity, bracket, tol=1e-14)
        denom = X + z - 1.0
        allocation = TimeAllocation(T=(z - 1.0) / denom, t=tuple(c / denom))
        R_sum = math.log2(z) * X / denom
        logger.debug("sum throughput: z*=%.8f T*=%.6f R=%.6f", z, allocation.T, R_sum)
        return allocation, R_sum

    # ------------------------------------------------------------------
    def weighted_closed_form(self, scenario: NetworkScenario,
                             weights: Sequence[float]) -> Tuple[TimeAllocation, float]:
        """
        KKT solution of max sum w_n R_n s.t. T + sum t = 1.

        For each user the SNR x_n = c_n T / t_n satisfies
        1 + x_n = -1/W0(-exp(-(1 + nu ln2 / w_n))), and the time price nu
        solves sum w_n c_n / ((1 + x_n) ln2) = nu.
        """
        c = scenario.harvest_coefficients
        w = np.asarray(weights, dtype=float)
        if w.shape != c.shape or np.any(w < 0) or not np.any(w > 0):
            raise DomainError(f"weights must be non-negative, one per user, not all zero: {weights}")
        active = w > 0

        def snr(nu: float) -> np.ndarray:
            x = np.full(c.shape, np.inf)
            arg = -np.exp(-(1.0 + nu * LN2 / w[active]))
            x[active] = -1.0 / numerics_service.lambert_w0(arg) - 1.0
            return x

        def balance(nu: float) -> float:
            x = snr(nu)
            return float(np.sum(w[active] * c[active] / ((1.0 + x[active]) * LN2))) - nu

        upper = float(np.sum(w * c)) / LN2
        nu = numerics_service.solve_scalar_root(balance, RootBracket(0.0, upper), tol=1e-14 * upper)
        x = snr(nu)
        with np.errstate(divide='ignore'):
            ratio = np.where(np.isfinite(x), c / x, 0.0)
        T = 1.0 / (1.0 + ratio.sum())
        t = ratio * T
        allocation = TimeAllocation(T=T, t=tuple(t))
        return allocation, float(np.sum(w * _slot_rates(c, T, t)))

    def solve_weighted_sum(self, scenario: NetworkScenario, weights: Sequence[float],
                           config: Optional[SubgradientConfig] = None) -> Tuple[TimeAllocation, float]:
        """
        Maximize sum a_n R_n over (T, t) with the concave engine, started
        from the KKT closed form.
        """
        a = np.asarray(weights, dtype=float)
        if np.any(~(a > 0)):
            raise DomainError(f"weights must be positive, got {weights}")
        c = scenario.harvest_coefficients
        n = c.size
        start, _ = self.weighted_closed_form(scenario, a)

        def objective(v: np.ndarray):
            T, t = v[0], v[1:]
            x = c * T / t
            value = float(np.sum(a * t * np.log2(1.0 + x)))
            grad = np.empty_like(v)
            grad[0] = float(np.sum(a * c / ((1.0 + x) * LN2)))
            grad[1:] = a * (np.log2(1.0 + x) - x / ((1.0 + x) * LN2))
            return value, grad

        def budget(v: np.ndarray):
            return float(v.sum() - 1.0), np.ones_like(v)

        x0 = np.maximum(np.concatenate([[start.T], start.t]), _FLOOR)
        x0 /= max(1.0, x0.sum())
        problem = ConcaveProblem(objective=objective, constraints=[budget],
                                 lower=np.full(n + 1, _FLOOR), upper=np.ones(n + 1), x0=x0)
        point, value, report = numerics_service.maximize_concave(problem, config)
        scale = min(1.0, 1.0 / point.sum())
        allocation = TimeAllocation(T=float(point[0] * scale), t=tuple(point[1:] * scale))
        value = float(np.sum(a * _slot_rates(c, allocation.T, np.array(allocation.t))))
        logger.debug("weighted sum: value=%.6f status=%s", value, report.status)
        return allocation, value

    # ------------------------------------------------------------------
    def solve_rate_profile(self, scenario: NetworkScenario, profile: RateProfile,
                           config: Optional[SubgradientConfig] = None
                           ) -> Tuple[TimeAllocation, float, SolverReport]:
        """
        Max R subject to R_n >= b_n R, solved as max ln R.

        With multipliers lambda the Layer-1 maximizers are R = 1 / sum(lambda)
        and the weighted closed form with weights lambda_n / b_n. The dual
        runs on nu = lambda * R0 with R0 the profile rate of the
        sum-throughput split. The allocation is the closed form at the final
        multipliers and R is its smallest b-scaled rate. The report carries
        the weak-duality bound V(lambda / b) / sum(lambda) and the gap to R.
        """
        config = config or SubgradientConfig(max_iterations=300, tolerance=1e-6)
        b = np.asarray(profile.b, dtype=float)
        c = scenario.harvest_coefficients
        if b.size != c.size:
            raise DomainError(f"profile has {b.size} shares for {c.size} users")
        n = c.size
        start, _ = self.solve_sum_throughput(scenario)
        R0 = max(float(np.min(self.user_rates_tdma(scenario, start) / b)), _FLOOR)

        def dual(nu: np.ndarray):
            allocation, value = self.weighted_closed_form(scenario, nu / b)
            scaled = self.user_rates_tdma(scenario, allocation) / b
            log_term, inverse = neg_log(float(nu.sum()), _NU_FLOOR)
            R = R0 * float(inverse)
            objective = float(log_term) + math.log(R0) - 1.0 + value / R0
            return objective, (scaled - R) / R0, (allocation, value)

        nu, (allocation, value), report = numerics_service.minimize_dual(
            dual, np.full(n, 1.0 / n), config, lower=np.full(n, _NU_FLOOR), label='tdma.rate_profile')

        R = float(np.min(self.user_rates_tdma(scenario, allocation) / b))
        bound = value / float(nu.sum())
        report.extra['dual_value'] = bound
        report.extra['dual_gap'] = bound - R
        report.method = 'dual-decomposition'
        logger.debug("rate profile: R=%.6f bound=%.6f status=%s", R, bound, report.status)
        return allocation, R, report

    def solve_common_throughput(self, scenario: NetworkScenario,
                                config: Optional[SubgradientConfig] = None
                                ) -> Tuple[TimeAllocation, float]:
        n = scenario.n_users
        allocation, R, _ = self.solve_rate_profile(scenario, RateProfile.equal(n), config)
        return allocation, R / n

    # ------------------------------------------------------------------
    def energy_efficiency(self, sum_rate: float, P0: float, T: float) -> float:
        """Sum throughput per unit of energy the base station radiates."""
        if not T > 0:
            raise DomainError(f"T must be positive, got {T}")
        if not P0 > 0:
            raise DomainError(f"P0 must be positive, got {P0}")
        return sum_rate / (P0 * T)


# Global instance
tdma_service = TdmaService()
