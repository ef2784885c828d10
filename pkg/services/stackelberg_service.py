# services/stackelberg_service.py
"""
Leader-follower pricing game.

The base station sells energy at c1 and time-bandwidth at c2. User n
buys (E_n, q_n) to maximize

    U_n = a_n log2(1 + R_n) - c1 E_n - c2 q_n,    R_n = q_n log2(1 + G_n E_n / q_n)

while the totals are capped by E_BS and Q. The shared caps carry
multipliers lambda1, lambda2 that every user sees as a price surcharge,
which gives the variational equilibrium (VE).
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from models.market import DEMAND_FLOOR, Demand, Market, Prices
from models.optimization import SolverReport, SubgradientConfig
from services.errors import BracketError, DomainError
from services.numerics_service import numerics_service

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


class StackelbergService:

    def user_utility(self, a: float, prices: Prices, E: float, q: float, G: float) -> float:
        if q < 0 or E < 0:
            raise DomainError(f"demands must be non-negative, got E={E}, q={q}")
        if q == 0:
            if E > 0:
                raise DomainError("energy demand without any time-bandwidth has no defined rate")
            rate = 0.0
        else:
            rate = q * math.log2(1.0 + G * E / q)
        return a * math.log2(1.0 + rate) - prices.c1 * E - prices.c2 * q

    def bs_revenue(self, prices: Prices, demand: Demand) -> float:
        return prices.c1 * demand.total_energy + prices.c2 * demand.total_resource

    def mean_utility(self, market: Market, prices: Prices, demand: Demand) -> float:
        return float(np.mean([self.user_utility(a, prices, E, q, G)
                              for a, E, q, G in zip(market.a, demand.E, demand.q, market.G)]))

    # ------------------------------------------------------------------
    # follower side
    # ------------------------------------------------------------------
    def demands_at(self, market: Market, l1: float, l2: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Utility-maximizing demands when energy costs l1 and time-bandwidth
        costs l2 per unit (price plus multiplier), floored at 1e-12.

        With e^Z = 1 + G E / q, Z = 1 + W0((l2 G - l1) / (e l1)).
        """
        if not (l1 > 0 and l2 > 0):
            raise DomainError(f"effective prices must be positive, got ({l1}, {l2})")
        a, G = market.weights, market.gains
        Z = 1.0 + numerics_service.lambert_w0((l2 * G - l1) / (math.e * l1))
        surplus = a * G * np.exp(-Z) / l1 - LN2 ** 2
        q = np.maximum(surplus / (Z * LN2), DEMAND_FLOOR)
        E = np.maximum(np.expm1(Z) * surplus / (Z * G * LN2), DEMAND_FLOOR)
        return E, q

    def price_bounds(self, market: Market, demand: Demand) -> Tuple[np.ndarray, np.ndarray]:
        """Each user's marginal utility of energy and of time-bandwidth at its demand."""
        a, G = market.weights, market.gains
        E, q = np.array(demand.E), np.array(demand.q)
        received = G * E + q
        log_term = np.log1p(G * E / q)
        common = received * (LN2 + q * log_term) * LN2
        rhs1 = a * G * q / common
        rhs2 = a * (received * log_term - G * E) / common
        return rhs1, rhs2

    def solve_ve(self, market: Market, prices: Prices, config: Optional[SubgradientConfig] = None,
                 initial: Optional[np.ndarray] = None) -> Tuple[Demand, float, float, SolverReport]:
        """
        Variational equilibrium at fixed prices.

        A projected-subgradient loop on (lambda1, lambda2) runs first; if
        it stops short of the tolerance the multipliers are refined by
        solving the market-clearing equations directly.
        """
        config = config or SubgradientConfig(max_iterations=200, tolerance=1e-6)
        c = prices.as_array()
        caps = np.array([market.E_BS, market.Q])

        def layer1(lam: np.ndarray):
            E, q = self.demands_at(market, c[0] + lam[0], c[1] + lam[1])
            return (E, q), (caps - np.array([E.sum(), q.sum()])) / caps

        def residual(lam, primal, slack):
            return max(float(np.max(np.maximum(-slack, 0.0))), float(np.max(np.abs(lam * slack) / c)))

        start = np.zeros(2) if initial is None else np.maximum(np.asarray(initial, dtype=float), 0.0)
        lam, (E, q), report = numerics_service.run_subgradient(
            layer1, start, config, residual=residual, scale=c, label='stackelberg.ve')
        report.method = 'subgradient'
        if report.status != 'optimal':
            lam = self._clearing_multipliers(market, prices, lam)
            E, q = self.demands_at(market, c[0] + lam[0], c[1] + lam[1])
            slack = (caps - np.array([E.sum(), q.sum()])) / caps
            report.residual = residual(lam, None, slack)
            report.status = 'optimal' if report.residual <= config.tolerance else 'not_converged'
            report.method = 'subgradient+root-refinement'
        report.extra['lambda1'], report.extra['lambda2'] = float(lam[0]), float(lam[1])
        return Demand(E=tuple(E), q=tuple(q)), float(lam[0]), float(lam[1]), report

    def _clearing_multipliers(self, market: Market, prices: Prices, guess: np.ndarray) -> np.ndarray:
        c = prices.as_array()

        def totals(l1: float, l2: float) -> Tuple[float, float]:
            E, q = self.demands_at(market, l1, l2)
            return float(E.sum()), float(q.sum())

        E0, q0 = totals(*c)
        if E0 <= market.E_BS and q0 <= market.Q:
            return np.zeros(2)

        def clearing(u: np.ndarray) -> np.ndarray:
            E, q = totals(*np.exp(u))
            return np.array([math.log(E / market.E_BS), math.log(q / market.Q)])

        try:
            with np.errstate(over='ignore', invalid='ignore'):
                result = optimize.root(clearing, np.log(c + np.maximum(guess, 0.0)), method='hybr')
        except (ValueError, ZeroDivisionError) as exc:
            logger.debug("clearing prices: joint root failed (%s)", exc)
            result = None
        if result is not None and result.success:
            l = np.exp(result.x)
            if np.all(l >= c * (1.0 - 1e-12)):
                return np.maximum(l - c, 0.0)
        logger.debug("clearing prices: falling back to nested root finding")
        return self._nested_clearing(market, c, totals)

    def _nested_clearing(self, market: Market, c: np.ndarray, totals) -> np.ndarray:
        def energy_price(l2: float) -> float:
            if totals(c[0], l2)[0] <= market.E_BS:
                return float(c[0])

            def excess(l1: float) -> float:
                return math.log(totals(l1, l2)[0] / market.E_BS)

            bracket = numerics_service.expand_bracket(excess, c[0], 2.0 * c[0])
            return numerics_service.solve_scalar_root(excess, bracket, tol=1e-14 * bracket.hi)

        def resource_excess(l2: float) -> float:
            return math.log(totals(energy_price(l2), l2)[1] / market.Q)

        if resource_excess(c[1]) <= 0:
            l2 = float(c[1])
        else:
            bracket = numerics_service.expand_bracket(resource_excess, c[1], 2.0 * c[1])
            l2 = numerics_service.solve_scalar_root(resource_excess, bracket, tol=1e-14 * bracket.hi)
        return np.maximum(np.array([energy_price(l2), l2]) - c, 0.0)

    # ------------------------------------------------------------------
    # leader side
    # ------------------------------------------------------------------
    def optimal_prices(self, market: Market, config: Optional[SubgradientConfig] = None
                       ) -> Tuple[Prices, Demand, SolverReport]:
        """
        Revenue-maximizing prices as a damped fixed point.

        Each round computes the VE and moves the prices toward the
        tightest user's marginal utilities, c <- c + damping (min RHS - c),
        taking the minimum over users whose demands are above the floor.
        Starts from a quarter of the tightest bound at the equal split.
        """
        config = config or SubgradientConfig(max_iterations=200, tolerance=1e-6)
        ve_config = SubgradientConfig(max_iterations=25, tolerance=1e-6)
        n = market.n_users
        equal = Demand(E=(market.E_BS / n,) * n, q=(market.Q / n,) * n)
        rhs1, rhs2 = self.price_bounds(market, equal)
        c = 0.25 * np.array([rhs1.min(), rhs2.min()])
        report = SolverReport(method='damped-fixed-point')
        lam = np.zeros(2)
        # the fixed point has to be approached from below the clearing prices
        for _ in range(60):
            demand, lam1, lam2, _ = self.solve_ve(market, Prices(*c), ve_config)
            unsold = np.array([demand.total_energy < market.E_BS * (1.0 - 1e-6),
                               demand.total_resource < market.Q * (1.0 - 1e-6)])
            if not unsold.any():
                lam = np.array([lam1, lam2])
                break
            c = np.where(unsold, 0.25 * c, c)
        change = math.inf
        for k in range(1, config.max_iterations + 1):
            demand, lam1, lam2, _ = self.solve_ve(market, Prices(*c), ve_config, initial=lam)
            active = demand.active()
            if not active.any():
                raise BracketError("no user is active at the current prices")
            rhs1, rhs2 = self.price_bounds(market, demand)
            target = np.array([rhs1[active].min(), rhs2[active].min()])
            updated = c + config.damping * (target - c)
            change = float(np.max(np.abs(updated - c) / c))
            report.multipliers.append([float(v) for v in updated])
            report.residuals.append(change)
            # the effective price l = c + lambda stays put while c climbs toward it
            lam = np.maximum(c + np.array([lam1, lam2]) - updated, 0.0)
            c = updated
            report.iterations = k
            if change <= config.tolerance:
                break
            logger.debug("optimal_prices: iteration %d c=(%.6g, %.6g) change %.2e", k, c[0], c[1], change)
        prices = Prices(*c)
        demand, lam1, lam2, ve_report = self.solve_ve(market, prices, ve_config, initial=lam)
        report.residual = change
        report.status = 'optimal' if change <= config.tolerance else 'not_converged'
        report.extra.update(lambda1=lam1, lambda2=lam2, revenue=self.bs_revenue(prices, demand))
        if report.status != 'optimal':
            logger.warning("optimal_prices: no fixed point after %d rounds (change %.2e)",
                           report.iterations, change)
        return prices, demand, report

    # ------------------------------------------------------------------
    # baselines and sampling
    # ------------------------------------------------------------------
    def capacity_max_allocation(self, market: Market) -> Demand:
        """Everything to the user with the best channel; the rest sit at the floor."""
        n = market.n_users
        best = int(np.argmax(market.gains))
        E = np.full(n, DEMAND_FLOOR)
        q = np.full(n, DEMAND_FLOOR)
        E[best] = market.E_BS - (n - 1) * DEMAND_FLOOR
        q[best] = market.Q - (n - 1) * DEMAND_FLOOR
        return Demand(E=tuple(E), q=tuple(q))

    def equal_sharing_allocation(self, market: Market) -> Demand:
        n = market.n_users
        return Demand(E=(market.E_BS / n,) * n, q=(market.Q / n,) * n)

    def sample_market(self, n_users: int, seed: int, snr_db: float = 30.0) -> Market:
        """a ~ U[1, 2], |H|^2 ~ Exp(1), L = Q = N0 = 1 and E_BS / (Q N0) = snr_db."""
        if n_users < 1:
            raise DomainError(f"need at least one user, got {n_users}")
        rng = np.random.default_rng(seed)
        a = rng.uniform(1.0, 2.0, n_users)
        G = rng.exponential(1.0, n_users)
        return Market(a=tuple(a), G=tuple(G), E_BS=10.0 ** (snr_db / 10.0), Q=1.0)


# Global instance
stackelberg_service = StackelbergService()
