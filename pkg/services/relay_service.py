# services/relay_service.py
"""
Wireless-powered amplify-and-forward relay over parallel channels.

The rate of channel i is 0.5 W_i log2(1 + gamma_i) (half duplex). The
solvers work with the tight approximation gamma = gs gr / (gs + gr),
which makes the problem at fixed theta concave in the powers.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize

from models.optimization import ConcaveProblem, RootBracket, SolverReport, SubgradientConfig
from models.relay import RelayAllocation, RelayLink
from services.errors import DomainError
from services.numerics_service import numerics_service

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
MODES = ('exact', 'approx')
_SLACK = 1e-9
_LOG_PRICE_RANGE = 60.0

# node positions for the reference geometry
SOURCE = np.array([-1.0, 0.0])
DESTINATION = np.array([1.0, 0.0])
RELAY = np.array([-0.25, 0.5])


def _approx(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    total = u + v
    return np.divide(u * v, total, out=np.zeros_like(total), where=total > 0)


class RelayService:

    # ------------------------------------------------------------------
    # link quantities
    # ------------------------------------------------------------------
    def exact_e2e_snr(self, gs, gr):
        gs, gr = np.asarray(gs, dtype=float), np.asarray(gr, dtype=float)
        if np.any(gs < 0) or np.any(gr < 0):
            raise DomainError("SNRs must be non-negative")
        with np.errstate(invalid='ignore'):
            value = np.where(np.isinf(gr), gs, gs * gr / (gs + gr + 1.0))
        return float(value) if value.ndim == 0 else value

    def approx_e2e_snr(self, gs, gr):
        """gs gr / (gs + gr); 0 when both are 0."""
        gs, gr = np.asarray(gs, dtype=float), np.asarray(gr, dtype=float)
        if np.any(gs < 0) or np.any(gr < 0):
            raise DomainError("SNRs must be non-negative")
        value = _approx(np.atleast_1d(gs * 1.0), np.atleast_1d(gr * 1.0))
        return float(value[0]) if gs.ndim == 0 and gr.ndim == 0 else value

    def harvested_power(self, link: RelayLink, theta: float, P_s) -> float:
        if not 0 <= theta <= 1:
            raise DomainError(f"theta must lie in [0, 1], got {theta}")
        return link.eta1 * theta * float(np.dot(np.asarray(P_s, dtype=float), link.h_s)) + link.P_r0

    def relay_budget(self, link: RelayLink, theta: float, P_s) -> float:
        return min(link.P_rm, self.harvested_power(link, theta, P_s))

    def check_feasible(self, link: RelayLink, alloc: RelayAllocation) -> None:
        P_s, P_r = np.array(alloc.P_s), np.array(alloc.P_r)
        if P_s.size != link.n_channels or P_r.size != link.n_channels:
            raise DomainError("allocation does not match the number of channels")
        if P_s.sum() > link.P_sm + _SLACK:
            raise DomainError(f"source power {P_s.sum()} exceeds P_sm={link.P_sm}")
        budget = self.relay_budget(link, alloc.theta, P_s)
        if P_r.sum() > budget + _SLACK:
            raise DomainError(f"relay power {P_r.sum()} exceeds its budget {budget}")

    def rate_total(self, link: RelayLink, alloc: RelayAllocation, mode: str = 'exact') -> float:
        if mode not in MODES:
            raise DomainError(f"unknown SNR mode {mode!r}; expected one of {MODES}")
        self.check_feasible(link, alloc)
        gs = link.source_scale(alloc.theta) * np.array(alloc.P_s)
        gr = link.relay_scale() * np.array(alloc.P_r)
        snr = self.exact_e2e_snr(gs, gr) if mode == 'exact' else _approx(gs, gr)
        return float(np.sum(0.5 * np.array(link.W) * np.log2(1.0 + snr)))

    # ------------------------------------------------------------------
    # fixed theta: powers of source and relay
    # ------------------------------------------------------------------
    def solve_fixed_theta(self, link: RelayLink, theta: float,
                          config: Optional[SubgradientConfig] = None
                          ) -> Tuple[RelayAllocation, float, SolverReport]:
        """
        Two-layer dual decomposition for the powers at fixed theta.

        Layer 1 solves each channel in closed form given the prices
        p_i = lambda3 - lambda1 eta1 theta |h_s,i|^2 on source power and
        q = lambda1 + lambda2 on relay power. Layer 2 minimizes the dual over
        log-scaled multipliers, which keeps every price positive:
        lambda1, lambda2 and the margin lambda3 - c lambda1 with
        c = eta1 theta max|h_s,i|^2 are exponentials. The Layer-1 powers at
        the final prices are scaled back into the feasible set.
        """
        if not 0 < theta < 1:
            raise DomainError(f"theta must lie in (0, 1), got {theta}")
        config = config or SubgradientConfig(max_iterations=300, tolerance=1e-6)
        A, B = link.source_scale(theta), link.relay_scale()
        W = np.array(link.W)
        h_s = np.array(link.h_s)
        gain = link.eta1 * theta * h_s
        c = float(gain.max())
        caps = np.array([self._harvest_cap(link, theta), link.P_rm, link.P_sm])
        budgets = np.array([link.P_r0, link.P_rm, link.P_sm])
        r0 = max(self._rate(link, theta, *self._equal_split(link, theta)), 1e-9)
        base = np.array([r0 / link.P_rm, r0 / link.P_rm, r0 / link.P_sm])

        def multipliers(u: np.ndarray) -> np.ndarray:
            lam1, lam2, margin = base * np.exp(u)
            return np.array([lam1, lam2, c * lam1 + margin])

        def dual(u: np.ndarray):
            lam = multipliers(u)
            p = lam[2] - lam[0] * gain
            q = lam[0] + lam[1]
            x, y = self._channel_powers(A, B, W, p, q)
            snr = _approx(A * x, B * y)
            value = float(np.sum(0.5 * W * np.log2(1.0 + snr) - p * x - q * y)) + float(np.dot(lam, budgets))
            slack = np.array([self.harvested_power(link, theta, x) - y.sum(),
                              link.P_rm - y.sum(), link.P_sm - x.sum()])
            margin = lam[2] - c * lam[0]
            grad = np.array([lam[0] * (slack[0] + c * slack[2]), lam[1] * slack[1], margin * slack[2]])
            return value / r0, grad / r0, (x, y, lam, slack)

        def residual(u, primal, grad):
            _, _, lam, slack = primal
            violation = float(np.max(np.maximum(-slack / caps, 0.0)))
            return max(violation, float(np.max(np.abs(lam * slack))) / r0)

        bound = np.full(3, _LOG_PRICE_RANGE)
        _, (x, y, _, _), report = numerics_service.minimize_dual(
            dual, np.zeros(3), config, lower=-bound, upper=bound, residual=residual,
            label='relay.fixed_theta')
        x, y = self._make_feasible(link, theta, x, y)
        rate = self._rate(link, theta, x, y)
        report.method = 'dual-decomposition'
        report.extra['theta'] = theta
        return RelayAllocation(P_s=tuple(x), P_r=tuple(y), theta=theta), rate, report

    @staticmethod
    def _channel_powers(A: np.ndarray, B: np.ndarray, W: np.ndarray, p: np.ndarray,
                        q: float) -> Tuple[np.ndarray, np.ndarray]:
        """Per-channel maximizer of 0.5 W log2(1 + S) - p x - q y with S = Ax By / (Ax + By)."""
        x, y = np.zeros_like(A), np.zeros_like(A)
        live = (A > 0) & (B > 0)
        if not live.any():
            return x, y
        a, b, w, pl = A[live], B[live], W[live], p[live]
        K = (np.sqrt(pl / a) + np.sqrt(q / b)) ** 2
        S = np.maximum(w / (2.0 * K * LN2) - 1.0, 0.0)
        ratio = np.sqrt(q * a / (pl * b))
        x[live] = S / a * (1.0 + ratio)
        y[live] = S / b * (1.0 + 1.0 / ratio)
        return x, y

    def _harvest_cap(self, link: RelayLink, theta: float) -> float:
        return link.eta1 * theta * link.P_sm * max(link.h_s) + link.P_r0

    def _rate(self, link: RelayLink, theta: float, x: np.ndarray, y: np.ndarray) -> float:
        snr = _approx(link.source_scale(theta) * x, link.relay_scale() * y)
        return float(np.sum(0.5 * np.array(link.W) * np.log2(1.0 + snr)))

    def _make_feasible(self, link: RelayLink, theta: float, x: np.ndarray,
                       y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        if x.sum() > link.P_sm:
            x = x * (link.P_sm / x.sum())
        budget = self.relay_budget(link, theta, x)
        if y.sum() > budget:
            y = y * (budget / y.sum()) if y.sum() > 0 else y
        return x, y

    def _equal_split(self, link: RelayLink, theta: float) -> Tuple[np.ndarray, np.ndarray]:
        n = link.n_channels
        x = np.full(n, link.P_sm / n)
        return x, np.full(n, self.relay_budget(link, theta, x) / n)

    def _best_channel(self, link: RelayLink, theta: float) -> Tuple[np.ndarray, np.ndarray]:
        n = link.n_channels
        candidates = []
        for j in range(n):
            x = np.zeros(n)
            x[j] = link.P_sm
            y = np.zeros(n)
            y[j] = self.relay_budget(link, theta, x)
            candidates.append((x, y))
        return max(candidates, key=lambda s: self._rate(link, theta, *s))

    # ------------------------------------------------------------------
    # theta search
    # ------------------------------------------------------------------
    @staticmethod
    def theta_grid(K: int) -> np.ndarray:
        if K < 1:
            raise DomainError(f"K must be at least 1, got {K}")
        return np.arange(1, K + 1) / (K + 1.0)

    def solve_grid_theta(self, link: RelayLink, K: int = 100,
                         config: Optional[SubgradientConfig] = None
                         ) -> Tuple[RelayAllocation, float, SolverReport]:
        """
        Best of the fixed-theta solves over theta = k / (K + 1), k = 1..K.

        Grid points whose dual loop did not converge are left out. If no
        point converged, the best of the rest is returned with status
        'not_converged'.
        """
        best: Optional[Tuple[RelayAllocation, float]] = None
        fallback: Optional[Tuple[RelayAllocation, float]] = None
        skipped: List[float] = []
        for theta in self.theta_grid(K):
            try:
                alloc, rate, fixed = self.solve_fixed_theta(link, float(theta), config)
            except DomainError as exc:
                logger.warning("grid theta=%.4f skipped: %s", theta, exc)
                skipped.append(float(theta))
                continue
            if not fixed.converged:
                logger.warning("grid theta=%.4f skipped: residual %.3e", theta, fixed.residual)
                skipped.append(float(theta))
                if fallback is None or rate > fallback[1]:
                    fallback = (alloc, rate)
                continue
            if best is None or rate > best[1]:
                best = (alloc, rate)
        status = 'optimal'
        if best is None:
            if fallback is None:
                raise DomainError("every grid point failed")
            best, status = fallback, 'not_converged'
        report = SolverReport(status=status, method='theta-grid', iterations=K)
        report.extra['theta'] = best[0].theta
        if skipped:
            report.notes.append(f"skipped theta values: {skipped}")
        logger.debug("grid theta: theta*=%.4f rate=%.6f status=%s", best[0].theta, best[1], status)
        return best[0], best[1], report

    def equal_split_baseline(self, link: RelayLink, K: int = 100) -> Tuple[RelayAllocation, float]:
        return self._baseline(link, K, self._equal_split)

    def best_channel_baseline(self, link: RelayLink, K: int = 100) -> Tuple[RelayAllocation, float]:
        return self._baseline(link, K, self._best_channel)

    def _baseline(self, link: RelayLink, K: int, allocate) -> Tuple[RelayAllocation, float]:
        scored = []
        for theta in self.theta_grid(K):
            x, y = allocate(link, float(theta))
            scored.append((self._rate(link, float(theta), x, y), float(theta), x, y))
        rate, theta, x, y = max(scored, key=lambda s: s[0])
        return RelayAllocation(P_s=tuple(x), P_r=tuple(y), theta=theta), rate

    # ------------------------------------------------------------------
    # alternating solver
    # ------------------------------------------------------------------
    def solve_theta_relay(self, link: RelayLink, P_s: np.ndarray) -> Tuple[float, np.ndarray, float]:
        """
        Best (theta, relay powers) for fixed source powers.

        For a given theta the relay powers follow a water-filling whose
        per-channel solution is closed form; theta itself comes from a
        bounded scalar search and the pair is then polished jointly.
        """
        P_s = np.asarray(P_s, dtype=float)
        B = link.relay_scale()
        W = np.array(link.W)

        def relay_powers(theta: float) -> np.ndarray:
            budget = self.relay_budget(link, theta, P_s)
            u = link.source_scale(theta) * P_s
            if budget <= 0 or not np.any((u > 0) & (B > 0)):
                return np.zeros_like(u)

            def spent(log_price: float) -> float:
                return math.log(max(self._relay_response(u, B, W, math.exp(log_price)).sum(), 1e-300)) \
                    - math.log(budget)

            lo, hi = -40.0, 40.0
            while spent(lo) <= 0 and lo > -600.0:
                lo -= 40.0
            while spent(hi) >= 0 and hi < 600.0:
                hi += 40.0
            log_price = numerics_service.solve_scalar_root(spent, RootBracket(lo, hi), tol=1e-12)
            y = self._relay_response(u, B, W, math.exp(log_price))
            return y * min(1.0, budget / y.sum()) if y.sum() > 0 else y

        def value(theta: float) -> float:
            return self._rate(link, theta, P_s, relay_powers(theta))

        result = optimize.minimize_scalar(lambda th: -value(th), bounds=(1e-9, 1.0 - 1e-9),
                                          method='bounded', options={'xatol': 1e-10})
        theta = float(result.x)
        y = relay_powers(theta)
        rate = self._rate(link, theta, P_s, y)
        theta_p, y_p = self._polish_theta_relay(link, P_s, theta, y)
        rate_p = self._rate(link, theta_p, P_s, y_p)
        if rate_p > rate:
            return theta_p, y_p, rate_p
        return theta, y, rate

    @staticmethod
    def _relay_response(u: np.ndarray, B: np.ndarray, W: np.ndarray, price: float) -> np.ndarray:
        """
        Relay power per channel when each watt costs price. With w = u + v,
        (1 + u) w^2 - u^2 w - M = 0 and M = W u^2 / (2 ln2 price / B).
        """
        y = np.zeros_like(u)
        live = (u > 0) & (B > 0)
        uu, bb, ww = u[live], B[live], W[live]
        M = ww * uu ** 2 / (2.0 * LN2 * price / bb)
        w = (uu ** 2 + np.sqrt(uu ** 4 + 4.0 * (1.0 + uu) * M)) / (2.0 * (1.0 + uu))
        y[live] = np.maximum(w - uu, 0.0) / bb
        return y

    def _polish_theta_relay(self, link: RelayLink, P_s: np.ndarray, theta: float,
                            y: np.ndarray) -> Tuple[float, np.ndarray]:
        n = link.n_channels
        A1 = np.array(link.h_s) / link.noise * P_s  # first-hop SNR before splitting
        B = link.relay_scale()
        W = np.array(link.W)
        supply = link.eta1 * float(np.dot(P_s, link.h_s))

        def objective(z: np.ndarray):
            th, yy = z[0], z[1:]
            u, v = (1.0 - th) * A1, B * yy
            S = _approx(u, v)
            total = u + v
            du = np.divide(v ** 2, total ** 2, out=np.full_like(total, 0.5), where=total > 0)
            dv = np.divide(u ** 2, total ** 2, out=np.full_like(total, 0.5), where=total > 0)
            weight = 0.5 * W / ((1.0 + S) * LN2)
            grad = np.concatenate([[-float(np.sum(weight * du * A1))], weight * dv * B])
            return float(np.sum(0.5 * W * np.log2(1.0 + S))), grad

        def harvest(z: np.ndarray):
            return float(z[1:].sum() - supply * z[0] - link.P_r0), np.concatenate([[-supply], np.ones(n)])

        def relay_cap(z: np.ndarray):
            return float(z[1:].sum() - link.P_rm), np.concatenate([[0.0], np.ones(n)])

        problem = ConcaveProblem(objective=objective, constraints=[harvest, relay_cap],
                                 lower=np.zeros(n + 1),
                                 upper=np.concatenate([[1.0], np.full(n, link.P_rm)]),
                                 x0=np.concatenate([[theta], y]))
        point, _, _ = numerics_service.maximize_concave(problem, SubgradientConfig(max_iterations=200))
        th = float(np.clip(point[0], 0.0, 1.0))
        _, yy = self._make_feasible(link, th, P_s, point[1:])
        return th, yy

    def solve_iterative(self, link: RelayLink, iterations: int = 1, theta0: float = 0.5,
                        config: Optional[SubgradientConfig] = None
                        ) -> Tuple[RelayAllocation, float, List[float]]:
        """
        Alternating maximization: source powers at fixed theta, then
        (theta, relay powers) at fixed source powers. A block result that
        does not improve the rate is discarded, so the trajectory never
        decreases.
        """
        if not 0 < theta0 < 1:
            raise DomainError(f"theta0 must lie in (0, 1), got {theta0}")
        if iterations < 1:
            raise DomainError(f"iterations must be at least 1, got {iterations}")
        alloc, rate, report = self.solve_fixed_theta(link, theta0, config)
        self._warn_unconverged(report)
        trajectory = [rate]
        for it in range(iterations):
            x = np.array(alloc.P_s)
            theta, y, candidate = self.solve_theta_relay(link, x)
            if candidate > rate and 0 < theta < 1:
                alloc, rate = RelayAllocation(P_s=tuple(x), P_r=tuple(y), theta=theta), candidate
            refreshed, candidate, report = self.solve_fixed_theta(link, alloc.theta, config)
            self._warn_unconverged(report)
            if candidate > rate:
                alloc, rate = refreshed, candidate
            trajectory.append(rate)
            logger.debug("iterative relay: iteration %d theta=%.4f rate=%.6f", it + 1, alloc.theta, rate)
        return alloc, rate, trajectory

    @staticmethod
    def _warn_unconverged(report: SolverReport) -> None:
        if not report.converged:
            logger.warning("iterative relay: fixed-theta solve at theta=%.4f stopped at residual %.3e",
                           report.extra['theta'], report.residual)

    # ------------------------------------------------------------------
    def relay_geometry(self, exponents, psm_db: float = 20.0, seed: int = 0) -> RelayLink:
        """
        Seeded link on the reference geometry with bounded path loss
        1 / (1 + d^xi) per channel and Rayleigh fading; N0 = W = 1,
        eta1 = 0.3, P_rm = P_sm and P_r0 = 0.
        """
        xi = np.asarray(list(exponents), dtype=float)
        if xi.size == 0 or np.any(xi <= 0):
            raise DomainError(f"path-loss exponents must be positive, got {exponents}")
        rng = np.random.default_rng(seed)
        d_sr = float(np.linalg.norm(RELAY - SOURCE))
        d_rd = float(np.linalg.norm(DESTINATION - RELAY))
        h_s = rng.exponential(1.0, xi.size) / (1.0 + d_sr ** xi)
        h_r = rng.exponential(1.0, xi.size) / (1.0 + d_rd ** xi)
        P_sm = 10.0 ** (psm_db / 10.0)
        return RelayLink(h_s=tuple(h_s), h_r=tuple(h_r), W=(1.0,) * xi.size, N0=1.0,
                         P_sm=P_sm, P_rm=P_sm, P_r0=0.0, eta1=0.3)


# Global instance
relay_service = RelayService()
