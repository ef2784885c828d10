# services/joint_service.py
"""
Joint downlink (SWIPT, NOMA or TDMA) and uplink (NOMA with time sharing)
max-min design.

The common rate R must satisfy R_n^down >= alpha R for every user and
sum_{n in M} R_n^up <= uplink capacity of M with each user getting
beta R. For each harvest time T on a grid the problem becomes convex
after the substitutions p = e^p~, t = e^t~, theta = e^theta~, R = e^R~
and is handed to the concave engine.
"""

import itertools
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from models.joint import MAX_JOINT_USERS, JointScenario, JointSolution
from models.optimization import ConcaveProblem, SolverReport, SubgradientConfig
from models.scenario import InterferenceScenario
from services.errors import DomainError, InfeasibleError, SolverError
from services.numerics_service import numerics_service

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
PROTOCOLS = ('noma', 'tdma')
_LOG_FLOOR = math.log(1e-20)


def _phi(z: float) -> float:
    """ln(2^z - 1) for z > 0."""
    if z * LN2 > 30.0:
        return z * LN2 + math.log1p(-2.0 ** (-z))
    return math.log(math.expm1(z * LN2))


def _dphi(z: float) -> float:
    return LN2 / -math.expm1(-z * LN2)


def _subsets(n: int) -> List[Tuple[int, ...]]:
    return [s for size in range(1, n + 1) for s in itertools.combinations(range(n), size)]


class JointService:

    # ------------------------------------------------------------------
    # rates and energies
    # ------------------------------------------------------------------
    def downlink_rate_noma(self, scenario: JointScenario, T: float, p: Sequence[float],
                           theta: Sequence[float], n: int, j: int) -> float:
        """Rate at which user j decodes user n's message (j >= n)."""
        if j < n:
            raise DomainError(f"user {j} cannot decode the message of stronger user {n}")
        p, theta = np.asarray(p, dtype=float), np.asarray(theta, dtype=float)
        g = scenario.gamma[j]
        signal = p[n] * theta[j] * g
        noise = theta[j] * g * float(p[n + 1:].sum()) + theta[j] * scenario.p_I[j] + 1.0
        return T * math.log2(1.0 + signal / noise)

    def downlink_rates_noma(self, scenario: JointScenario, T: float, p, theta) -> np.ndarray:
        n = scenario.n_users
        return np.array([min(self.downlink_rate_noma(scenario, T, p, theta, i, j) for j in range(i, n))
                         for i in range(n)])

    def downlink_rate_tdma(self, scenario: JointScenario, t_n: float, theta_n: float, n: int) -> float:
        if t_n < 0 or not 0 <= theta_n <= 1:
            raise DomainError(f"need t_n >= 0 and theta_n in [0, 1], got ({t_n}, {theta_n})")
        snr = theta_n * scenario.rho0 * scenario.gamma[n] / (theta_n * scenario.p_I[n] + 1.0)
        return t_n * math.log2(1.0 + snr)

    def downlink_rates_tdma(self, scenario: JointScenario, t, theta) -> np.ndarray:
        return np.array([self.downlink_rate_tdma(scenario, t[i], theta[i], i)
                         for i in range(scenario.n_users)])

    def harvested_energy_noma(self, scenario: JointScenario, T: float, theta_n: float, n: int) -> float:
        """Energy harvested by user n with the whole power budget in use."""
        return scenario.eta1 * T * (1.0 - theta_n) * (scenario.gamma[n] * scenario.rho0 + scenario.p_I[n])

    def harvested_energy_tdma(self, scenario: JointScenario, T: float, t: Sequence[float],
                              theta_n: float, n: int) -> float:
        """Full harvesting in the other users' slots, a 1 - theta_n share in its own."""
        received = scenario.gamma[n] * scenario.rho0 + scenario.p_I[n]
        return scenario.eta1 * received * (float(np.sum(t)) - theta_n * t[n])

    def uplink_capacity(self, scenario: JointScenario, T: float, energies: Sequence[float],
                        subset: Sequence[int]) -> float:
        """Sum-rate bound of a user subset when each user spends its energy over 1 - T."""
        if not 0 < T < 1:
            raise DomainError(f"T must lie in (0, 1), got {T}")
        E = np.asarray(energies, dtype=float)
        idx = list(subset)
        received = float(np.sum(scenario.gains[idx] * E[idx]))
        return (1.0 - T) * math.log2(1.0 + received / ((1.0 - T) * (1.0 + scenario.p_I0)))

    # ------------------------------------------------------------------
    # convex programs at fixed T
    # ------------------------------------------------------------------
    def _rate_cap(self, scenario: JointScenario, T: float) -> float:
        caps = []
        if scenario.alpha > 0:
            caps.append(T * math.log2(1.0 + scenario.rho0 * max(scenario.gamma)) / scenario.alpha)
        if scenario.beta > 0:
            X = scenario.eta1 * T * float(scenario.uplink_weights.sum()) / ((1.0 - T) * (1.0 + scenario.p_I0))
            caps.append((1.0 - T) * math.log2(1.0 + X) / (scenario.beta * scenario.n_users))
        return min(caps) * (1.0 + 1e-6) + 1e-12

    def _uplink_constraints(self, scenario: JointScenario, T: float, offset: int,
                            with_slots: bool) -> List[Callable]:
        """Subset constraints on theta~ (and t~ for TDMA); variable 0 is R~."""
        n, K, beta = scenario.n_users, scenario.uplink_weights, scenario.beta
        if with_slots:
            D = (1.0 - T) * (1.0 + scenario.p_I0) / scenario.eta1
            budget_scale = T
        else:
            D = (1.0 - T) * (1.0 + scenario.p_I0) / (scenario.eta1 * T)
            budget_scale = 1.0
        constraints = []
        for subset in _subsets(n):
            idx = np.array(subset)

            def c2(z: np.ndarray, idx=idx):
                th = z[offset:offset + n][idx]
                share = th + z[1:1 + n][idx] if with_slots else th
                scale = budget_scale * float(K[idx].sum()) + D
                w = beta * idx.size * math.exp(z[0]) / (1.0 - T)
                term = np.exp(share) * K[idx]
                value = (float(term.sum()) + D * 2.0 ** w - budget_scale * float(K[idx].sum()) - D) / scale
                grad = np.zeros_like(z)
                grad[0] = D * 2.0 ** w * LN2 * w / scale
                grad[offset + idx] += term / scale
                if with_slots:
                    grad[1 + idx] += term / scale
                return value, grad

            constraints.append(c2)
        return constraints

    def noma_program(self, scenario: JointScenario, T: float, interference_free: bool = False,
                     x0: Optional[np.ndarray] = None) -> ConcaveProblem:
        """
        Variables (R~, p~_1..p~_N, theta~_1..theta~_N). The interference-free
        form replaces the N(N+1)/2 decoding constraints by N-1 linear
        ordering constraints plus one decoding constraint per user.
        """
        n, g, p_I, alpha = scenario.n_users, scenario.gains, scenario.interference, scenario.alpha
        if interference_free and not scenario.interference_free:
            raise DomainError("the interference-free program needs p_I = 0 and p_I0 = 0")
        constraints: List[Callable] = []
        if alpha > 0:
            pairs = [(i, i) for i in range(n)] if interference_free else \
                [(i, j) for i in range(n) for j in range(i, n)]
            for i, j in pairs:
                def c1(z: np.ndarray, i=i, j=j):
                    p, th = z[1:1 + n], z[1 + n:]
                    own = math.exp(-p[i] - th[j]) / g[j]
                    tail = np.exp(p[i + 1:] - p[i])
                    Q = p_I[j] * math.exp(-p[i]) / g[j] + own + float(tail.sum())
                    zt = alpha * math.exp(z[0]) / T
                    grad = np.zeros_like(z)
                    grad[0] = _dphi(zt) * zt
                    grad[1 + i] = -1.0
                    grad[2 + i:1 + n] = tail / Q
                    grad[1 + n + j] = -own / Q
                    return math.log(Q) + _phi(zt), grad

                constraints.append(c1)
            if interference_free:
                for i in range(n - 1):
                    def order(z: np.ndarray, i=i):
                        grad = np.zeros_like(z)
                        grad[1 + n + i], grad[2 + n + i] = 1.0, -1.0
                        return float(z[1 + n + i] - z[2 + n + i] - math.log(g[i + 1] / g[i])), grad

                    constraints.append(order)
        if scenario.beta > 0:
            constraints.extend(self._uplink_constraints(scenario, T, 1 + n, with_slots=False))

        def power(z: np.ndarray):
            e = np.exp(z[1:1 + n])
            grad = np.zeros_like(z)
            grad[1:1 + n] = e / scenario.rho0
            return float(e.sum() / scenario.rho0 - 1.0), grad

        constraints.append(power)
        R_cap = self._rate_cap(scenario, T)
        lower = np.concatenate([[math.log(1e-12)], np.full(n, _LOG_FLOOR + math.log(scenario.rho0)),
                                np.full(n, _LOG_FLOOR)])
        upper = np.concatenate([[math.log(R_cap)], np.full(n, math.log(scenario.rho0)), np.zeros(n)])
        if x0 is None:
            x0 = np.concatenate([[math.log(1e-3 * R_cap)], np.full(n, math.log(scenario.rho0 / n)),
                                 np.full(n, math.log(0.5))])
        return ConcaveProblem(objective=lambda z: (float(z[0]), np.eye(1, z.size).ravel()),
                              constraints=constraints, lower=lower, upper=upper,
                              x0=np.clip(x0, lower, upper))

    def tdma_program(self, scenario: JointScenario, T: float,
                     x0: Optional[np.ndarray] = None) -> ConcaveProblem:
        """Variables (R~, t~_1..t~_N, theta~_1..theta~_N)."""
        n, g, p_I, alpha = scenario.n_users, scenario.gains, scenario.interference, scenario.alpha
        constraints: List[Callable] = []
        if alpha > 0:
            for i in range(n):
                def c1(z: np.ndarray, i=i):
                    zt = alpha * math.exp(z[0] - z[1 + i])
                    inv = math.exp(-z[1 + n + i])
                    grad = np.zeros_like(z)
                    grad[0] = _dphi(zt) * zt
                    grad[1 + i] = -grad[0]
                    grad[1 + n + i] = -inv / (p_I[i] + inv)
                    value = _phi(zt) + math.log(p_I[i] + inv) - math.log(scenario.rho0 * g[i])
                    return value, grad

                constraints.append(c1)
        if scenario.beta > 0:
            constraints.extend(self._uplink_constraints(scenario, T, 1 + n, with_slots=True))

        def slots(z: np.ndarray):
            e = np.exp(z[1:1 + n])
            grad = np.zeros_like(z)
            grad[1:1 + n] = e / T
            return float(e.sum() / T - 1.0), grad

        constraints.append(slots)
        R_cap = self._rate_cap(scenario, T)
        lower = np.concatenate([[math.log(1e-12)], np.full(n, _LOG_FLOOR + math.log(T)),
                                np.full(n, _LOG_FLOOR)])
        upper = np.concatenate([[math.log(R_cap)], np.full(n, math.log(T)), np.zeros(n)])
        if x0 is None:
            x0 = np.concatenate([[math.log(1e-3 * R_cap)], np.full(n, math.log(T / n)),
                                 np.full(n, math.log(0.5))])
        return ConcaveProblem(objective=lambda z: (float(z[0]), np.eye(1, z.size).ravel()),
                              constraints=constraints, lower=lower, upper=upper,
                              x0=np.clip(x0, lower, upper))

    # ------------------------------------------------------------------
    # achieved rate of a concrete design
    # ------------------------------------------------------------------
    def _achieved(self, scenario: JointScenario, T: float, downlink: np.ndarray,
                  energies: np.ndarray) -> Tuple[float, float]:
        """(common rate R, equal uplink rate) that the design actually supports."""
        levels = []
        if scenario.alpha > 0:
            levels.append(float(downlink.min()) / scenario.alpha)
        uplink = min(self.uplink_capacity(scenario, T, energies, s) / len(s)
                     for s in _subsets(scenario.n_users))
        if scenario.beta > 0:
            levels.append(uplink / scenario.beta)
        return max(min(levels), 0.0), uplink

    def _noma_at(self, scenario: JointScenario, T: float, interference_free: bool,
                 x0: Optional[np.ndarray]) -> Tuple[JointSolution, np.ndarray]:
        n = scenario.n_users
        problem = self.noma_program(scenario, T, interference_free, x0)
        point, _, report = numerics_service.maximize_concave(problem, SubgradientConfig(
            max_iterations=300, tolerance=1e-6))
        p = np.exp(point[1:1 + n])
        theta = np.clip(np.exp(point[1 + n:]), 0.0, 1.0)
        # the leftover budget goes to the weakest user, whose message everyone cancels
        p[0] += max(scenario.rho0 - p.sum(), 0.0)
        downlink = self.downlink_rates_noma(scenario, T, p, theta)
        energies = np.array([self.harvested_energy_noma(scenario, T, theta[i], i) for i in range(n)])
        R, uplink = self._achieved(scenario, T, downlink, energies)
        return JointSolution(protocol='noma', T=T, R=R, theta=theta, p=p, downlink_rates=downlink,
                             uplink_rate=uplink, report=report), point

    def _tdma_at(self, scenario: JointScenario, T: float,
                 x0: Optional[np.ndarray]) -> Tuple[JointSolution, np.ndarray]:
        n = scenario.n_users
        problem = self.tdma_program(scenario, T, x0)
        point, _, report = numerics_service.maximize_concave(problem, SubgradientConfig(
            max_iterations=300, tolerance=1e-6))
        t = np.exp(point[1:1 + n])
        theta = np.clip(np.exp(point[1 + n:]), 0.0, 1.0)
        # stretch the slots to fill T while keeping theta_n t_n, so the energies stay put
        stretched = t * (T / t.sum())
        theta = np.clip(theta * t / stretched, 0.0, 1.0)
        t = stretched
        downlink = self.downlink_rates_tdma(scenario, t, theta)
        energies = np.array([self.harvested_energy_tdma(scenario, T, t, theta[i], i) for i in range(n)])
        R, uplink = self._achieved(scenario, T, downlink, energies)
        return JointSolution(protocol='tdma', T=T, R=R, theta=theta, t=t, downlink_rates=downlink,
                             uplink_rate=uplink, report=report), point

    # ------------------------------------------------------------------
    # grid over T
    # ------------------------------------------------------------------
    def solve_joint_noma(self, scenario: JointScenario, T_step: float = 0.01,
                         interference_free: bool = False) -> JointSolution:
        return self._grid(scenario, T_step, lambda T, x0: self._noma_at(scenario, T, interference_free, x0),
                          'joint.noma')

    def solve_joint_tdma(self, scenario: JointScenario, T_step: float = 0.01) -> JointSolution:
        return self._grid(scenario, T_step, lambda T, x0: self._tdma_at(scenario, T, x0), 'joint.tdma')

    def solve_joint(self, scenario: JointScenario, protocol: str = 'noma',
                    T_step: float = 0.01) -> JointSolution:
        if protocol not in PROTOCOLS:
            raise DomainError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
        if protocol == 'noma':
            return self.solve_joint_noma(scenario, T_step)
        return self.solve_joint_tdma(scenario, T_step)

    def _grid(self, scenario: JointScenario, T_step: float, solve_at, label: str) -> JointSolution:
        if scenario.n_users > MAX_JOINT_USERS:
            raise DomainError(f"at most {MAX_JOINT_USERS} users are supported, got {scenario.n_users}")
        if not 0 < T_step < 0.5:
            raise DomainError(f"T_step must lie in (0, 0.5), got {T_step}")
        best: Optional[JointSolution] = None
        x0 = None
        skipped = 0
        grid = np.arange(1, int(math.floor(1.0 / T_step + 1e-9))) * T_step
        for T in grid:
            try:
                solution, x0 = solve_at(float(T), x0)
            except (SolverError, ValueError, OverflowError) as exc:
                logger.warning("%s: T=%.3f skipped (%s)", label, T, exc)
                skipped += 1
                x0 = None
                continue
            if best is None or solution.R > best.R:
                best = solution
        if best is None:
            raise InfeasibleError(f"{label}: no feasible grid point")
        best.report.method = f"{label}: T grid step {T_step} + slsqp"
        best.report.extra['grid_points'] = float(grid.size)
        best.report.extra['skipped'] = float(skipped)
        logger.debug("%s: T*=%.3f R=%.6f", label, best.T, best.R)
        return best

    # ------------------------------------------------------------------
    def audit_joint(self, scenario: JointScenario, solution: JointSolution) -> float:
        """Largest violation of the untransformed constraints (<= 0 means feasible)."""
        n, T, R = scenario.n_users, solution.T, solution.R
        theta = np.asarray(solution.theta, dtype=float)
        worst = float(max(np.max(-theta), np.max(theta - 1.0)))
        if solution.protocol == 'noma':
            p = np.asarray(solution.p, dtype=float)
            downlink = self.downlink_rates_noma(scenario, T, p, theta)
            energies = np.array([self.harvested_energy_noma(scenario, T, theta[i], i) for i in range(n)])
            worst = max(worst, float(p.sum() - scenario.rho0) / scenario.rho0, float(np.max(-p)))
        else:
            t = np.asarray(solution.t, dtype=float)
            downlink = self.downlink_rates_tdma(scenario, t, theta)
            energies = np.array([self.harvested_energy_tdma(scenario, T, t, theta[i], i) for i in range(n)])
            worst = max(worst, float(t.sum() - T), float(np.max(-t)))
        worst = max(worst, float(np.max(scenario.alpha * R - downlink)))
        for subset in _subsets(n):
            cap = self.uplink_capacity(scenario, T, energies, subset)
            worst = max(worst, scenario.beta * len(subset) * R - cap)
        return worst

    def joint_scenario(self, distances: Sequence[float], rho0_db: float = 40.0, eta1: float = 0.5,
                       alpha: float = 0.5, exponent: float = 2.0,
                       interference: Optional[InterferenceScenario] = None) -> JointScenario:
        """Bounded path loss gamma = 1 / (1 + d^xi); users sorted by ascending gain."""
        d = np.asarray(distances, dtype=float)
        if d.size == 0 or np.any(d <= 0):
            raise DomainError(f"distances must be positive, got {distances}")
        gamma = 1.0 / (1.0 + d ** exponent)
        order = np.argsort(gamma, kind='stable')
        p_I = np.zeros(d.size) if interference is None else np.asarray(interference.p_I, dtype=float)
        p_I0 = 0.0 if interference is None else interference.p_I0
        return JointScenario(gamma=tuple(gamma[order]), rho0=10.0 ** (rho0_db / 10.0), eta1=eta1,
                             alpha=alpha, p_I=tuple(p_I[order]), p_I0=p_I0)


# Global instance
joint_service = JointService()
