# services/numerics_service.py
"""
Shared numerical kernels: Lambert W, digamma, bracketed roots, the dense
LP solver, two multiplier engines (projected subgradient and a
quasi-Newton minimizer for smooth duals), a constrained concave
maximizer and a 1-D grid search.

Every method is a pure function of its arguments, so the global
`numerics_service` instance can be shared between threads.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special

from models.optimization import (ConcaveProblem, LinearProgram, LPResult, RootBracket,
                                 SolverReport, SubgradientConfig)
from services import simplex
from services.errors import BracketError, DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

BRANCH_POINT = -math.exp(-1.0)
_HALLEY_STEPS = 40
_W_RESIDUAL = 1e-12
_FEASIBILITY_TOL = 1e-6
_ACTIVE_TOL = 1e-7


class NumericsService:
    """Numerical building blocks used by every solver service."""

    # ------------------------------------------------------------------
    # special functions
    # ------------------------------------------------------------------
    def lambert_w0(self, x: ArrayLike) -> ArrayLike:
        """
        Principal branch of the Lambert W function.

        Accepts a scalar or an array. Halley iteration from a
        region-dependent seed, with bisection for any entry whose residual
        is still too large.
        """
        arr = np.asarray(x, dtype=float)
        scalar = arr.ndim == 0
        values = np.atleast_1d(arr).astype(float)
        if np.isnan(values).any():
            raise DomainError("lambert_w0 is undefined for NaN")
        if (values < BRANCH_POINT - 1e-15).any():
            raise DomainError(f"lambert_w0 requires x >= -1/e, got {values.min()!r}")
        values = np.maximum(values, BRANCH_POINT)

        w = self._w0_seed(values)
        finite = np.isfinite(values)
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            for _ in range(_HALLEY_STEPS):
                wp1 = w + 1.0
                r = w - values * np.exp(-w)
                step = r / (wp1 - (w + 2.0) * r / (2.0 * wp1))
                step = np.where(finite & (np.abs(wp1) > 1e-12) & np.isfinite(step), step, 0.0)
                w = w - step
                if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(w))):
                    break
            residual = np.abs(w * np.exp(w) - values)
        bad = finite & ~(residual <= _W_RESIDUAL * np.maximum(1.0, np.abs(values)))
        if bad.any():
            logger.debug("lambert_w0: bisection fallback for %d entries", int(bad.sum()))
            w[bad] = self._w0_bisect(values[bad])
        w[~finite] = np.inf
        return float(w[0]) if scalar else w.reshape(arr.shape)

    @staticmethod
    def _w0_seed(x: np.ndarray) -> np.ndarray:
        seed = np.empty_like(x)
        near = x < -0.25
        mid = (~near) & (x <= math.e)
        far = x > math.e
        p = np.sqrt(np.maximum(2.0 * (math.e * x[near] + 1.0), 0.0))
        seed[near] = -1.0 + p - p ** 2 / 3.0 + 11.0 / 72.0 * p ** 3
        l1 = np.log1p(x[mid])
        seed[mid] = l1 * (1.0 - np.log1p(l1) / (2.0 + l1))
        with np.errstate(divide='ignore', invalid='ignore'):
            big = np.log(x[far])
            seed[far] = big - np.log(big) + np.log(big) / big
        return seed

    @staticmethod
    def _w0_bisect(x: np.ndarray) -> np.ndarray:
        lo = np.full_like(x, -1.0)
        hi = np.where(x > 0, np.maximum(1.0, np.log1p(np.maximum(x, 0.0))), 0.0)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = mid * np.exp(mid) > x
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        return 0.5 * (lo + hi)

    def digamma(self, x: ArrayLike) -> ArrayLike:
        arr = np.asarray(x, dtype=float)
        if np.isnan(arr).any() or (arr <= 0).any():
            raise DomainError(f"digamma requires x > 0, got {x!r}")
        result = special.digamma(arr)
        return float(result) if arr.ndim == 0 else result

    # ------------------------------------------------------------------
    # root finding
    # ------------------------------------------------------------------
    def solve_scalar_root(self, f: Callable[[float], float], bracket: RootBracket,
                          tol: float = 1e-12) -> float:
        """
        Root of f on the bracket by Brent's method.

        Args:
            f: continuous scalar function
            bracket: interval over which f changes sign
            tol: absolute tolerance on the root location

        Returns:
            The root. An endpoint that is already an exact zero is returned as is.
        """
        f_lo, f_hi = f(bracket.lo), f(bracket.hi)
        if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
            raise BracketError(f"non-finite value at bracket ends: f(lo)={f_lo}, f(hi)={f_hi}")
        if f_lo == 0.0:
            return bracket.lo
        if f_hi == 0.0:
            return bracket.hi
        if (f_lo > 0) == (f_hi > 0):
            raise BracketError(
                f"no sign change on [{bracket.lo}, {bracket.hi}]: f(lo)={f_lo:.6g}, f(hi)={f_hi:.6g}")

        def guarded(z: float) -> float:
            value = f(z)
            if not math.isfinite(value):
                raise BracketError(f"non-finite evaluation at {z}")
            return value

        return optimize.brentq(guarded, bracket.lo, bracket.hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                               maxiter=500)

    def expand_bracket(self, f: Callable[[float], float], lo: float, hi: float,
                       max_doublings: int = 200) -> RootBracket:
        """Doubles hi until f changes sign between lo and hi."""
        f_lo = f(lo)
        for _ in range(max_doublings):
            f_hi = f(hi)
            if (f_lo > 0) != (f_hi > 0) or f_hi == 0.0:
                return RootBracket(lo, hi)
            lo, f_lo = hi, f_hi
            hi *= 2.0
        raise BracketError(f"no sign change found up to {hi}")

    # ------------------------------------------------------------------
    # linear programming
    # ------------------------------------------------------------------
    def solve_lp(self, lp: LinearProgram) -> LPResult:
        result = simplex.solve(lp)
        logger.debug("solve_lp: status=%s objective=%s pivots=%d",
                     result.status, result.objective, result.iterations)
        return result

    # ------------------------------------------------------------------
    # dual decomposition
    # ------------------------------------------------------------------
    def project_simplex(self, v: np.ndarray) -> np.ndarray:
        """
        Clipping projection onto the probability simplex.

        Each entry is clipped into [0, 1 - sum of the entries before it];
        the last entry takes whatever remains.
        """
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        used = 0.0
        for n in range(v.size - 1):
            out[n] = min(max(v[n], 0.0), 1.0 - used)
            used += out[n]
        out[-1] = max(1.0 - used, 0.0)
        return out

    def run_subgradient(self, layer1: Callable[[np.ndarray], Tuple[object, np.ndarray]],
                        initial: np.ndarray, config: SubgradientConfig,
                        project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                        residual: Optional[Callable[[np.ndarray, object, np.ndarray], float]] = None,
                        scale: Optional[np.ndarray] = None,
                        label: str = 'subgradient') -> Tuple[np.ndarray, object, SolverReport]:
        """
        Projected subgradient descent on a dual function.

        layer1 maps multipliers to (primal point, constraint slack). The
        update is lam <- project(lam - step(k) * scale * slack). A
        DomainError raised by layer1 halves the step and retries from the
        previous multipliers.
        """
        project = project or (lambda lam: np.maximum(lam, 0.0))
        residual = residual or _default_residual
        scale = np.ones_like(initial, dtype=float) if scale is None else np.asarray(scale, dtype=float)
        lam = project(np.asarray(initial, dtype=float))
        report = SubgradientReportBuilder(label)
        primal, slack = layer1(lam)
        factor = 1.0
        for k in range(1, config.max_iterations + 1):
            res = residual(lam, primal, slack)
            report.record(lam, res)
            if res <= config.tolerance:
                return lam, primal, report.finish('optimal', k - 1)
            candidate = project(lam - factor * config.step(k) * scale * slack)
            while True:
                try:
                    new_primal, new_slack = layer1(candidate)
                    break
                except DomainError as exc:
                    factor *= 0.5
                    report.halved()
                    logger.warning("%s: step halved at iteration %d (%s)", label, k, exc)
                    if factor < 1e-12:
                        return lam, primal, report.finish('not_converged', k)
                    candidate = project(lam - factor * config.step(k) * scale * slack)
            lam, primal, slack = candidate, new_primal, new_slack
            if k % 200 == 0:
                logger.debug("%s: iteration %d residual %.3e", label, k, res)
        res = residual(lam, primal, slack)
        report.record(lam, res)
        status = 'optimal' if res <= config.tolerance else 'not_converged'
        if status != 'optimal':
            logger.info("%s: budget of %d iterations spent, residual %.3e",
                        label, config.max_iterations, res)
        return lam, primal, report.finish(status, config.max_iterations)

    def minimize_dual(self, dual: Callable[[np.ndarray], Tuple[float, np.ndarray, object]],
                      initial: np.ndarray, config: SubgradientConfig,
                      lower: Optional[np.ndarray] = None, upper: Optional[np.ndarray] = None,
                      residual: Optional[Callable[[np.ndarray, object, np.ndarray], float]] = None,
                      label: str = 'dual') -> Tuple[np.ndarray, object, SolverReport]:
        """
        Minimize a differentiable convex dual function by projected
        quasi-Newton multiplier updates (L-BFGS-B).

        dual maps multipliers to (dual value, gradient, primal point). For
        a Lagrangian dual the gradient is the constraint slack at the
        Layer-1 maximizer, so the residual test is the one run_subgradient
        uses. Multipliers stay inside [lower, upper]; lower defaults to 0.

        Returns:
            (multipliers, primal point at those multipliers, report). The
            status is 'not_converged' when the budget of
            config.max_iterations runs out above config.tolerance.
        """
        residual = residual or _default_residual
        initial = np.asarray(initial, dtype=float)
        lower = np.zeros_like(initial) if lower is None else np.asarray(lower, dtype=float)
        upper = np.full_like(initial, np.inf) if upper is None else np.asarray(upper, dtype=float)
        builder = SubgradientReportBuilder(label)
        last: Dict = {}

        def evaluate(z: np.ndarray):
            z = np.asarray(z, dtype=float)
            key = z.tobytes()
            if last.get('key') != key:
                value, grad, primal = dual(z)
                last.update(key=key, value=float(value), grad=np.asarray(grad, dtype=float),
                            primal=primal)
            return last['value'], last['grad'], last['primal']

        def fun(z: np.ndarray):
            value, grad, _ = evaluate(z)
            return value, grad

        def track(z: np.ndarray) -> None:
            value, grad, primal = evaluate(z)
            builder.record(np.asarray(z, dtype=float), residual(z, primal, grad))
            builder.report.objective_history.append(value)

        z0 = np.clip(initial, lower, upper)
        track(z0)
        bounds = [(lo if math.isfinite(lo) else None, hi if math.isfinite(hi) else None)
                  for lo, hi in zip(lower, upper)]
        with np.errstate(divide='ignore', over='ignore'):
            result = optimize.minimize(fun, z0, jac=True, method='L-BFGS-B', bounds=bounds,
                                       callback=track,
                                       options={'maxiter': config.max_iterations, 'ftol': 1e-15,
                                                'gtol': 1e-12})
        z = np.clip(result.x, lower, upper)
        value, grad, primal = evaluate(z)
        res = residual(z, primal, grad)
        builder.record(z, res)
        status = 'optimal' if res <= config.tolerance else 'not_converged'
        report = builder.finish(status, int(result.nit))
        report.extra['dual_value'] = value
        if status != 'optimal':
            logger.info("%s: residual %.3e after %d iterations (%s)", label, res, result.nit,
                        result.message)
        return z, primal, report

    # ------------------------------------------------------------------
    # concave maximization
    # ------------------------------------------------------------------
    def maximize_concave(self, problem: ConcaveProblem,
                         config: Optional[SubgradientConfig] = None) -> Tuple[np.ndarray, float, SolverReport]:
        """
        Maximize a concave objective under convex constraints with SLSQP.

        The report carries the best feasible objective seen at each
        iteration and a KKT stationarity residual computed from the
        active constraint gradients by non-negative least squares.
        """
        config = config or SubgradientConfig()
        lower = np.asarray(problem.lower, dtype=float)
        upper = np.asarray(problem.upper, dtype=float)
        if problem.x0 is not None:
            x0 = np.asarray(problem.x0, dtype=float)
        else:
            with np.errstate(invalid='ignore'):
                middle = 0.5 * (lower + upper)
            x0 = np.where(np.isfinite(middle), middle,
                          np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0)))
        x0 = np.clip(x0, lower, upper)

        point, value, report = self._slsqp(problem, x0, lower, upper, config)
        if report.status != 'optimal':
            logger.debug("maximize_concave: warm restart (residual %.3e)", report.residual)
            retry_point, retry_value, retry = self._slsqp(problem, point, lower, upper, config)
            retry.objective_history = report.objective_history + [
                max(report.objective_history[-1] if report.objective_history else -np.inf, v)
                for v in retry.objective_history]
            retry.iterations += report.iterations
            if retry_value >= value - 1e-12:
                point, value, report = retry_point, retry_value, retry
        if report.status != 'optimal':
            logger.warning("maximize_concave: not converged, stationarity residual %.3e", report.residual)
        return point, value, report

    def _slsqp(self, problem: ConcaveProblem, x0: np.ndarray, lower: np.ndarray, upper: np.ndarray,
               config: SubgradientConfig) -> Tuple[np.ndarray, float, SolverReport]:
        def neg_objective(x):
            value, grad = problem.objective(x)
            return -value, -np.asarray(grad, dtype=float)

        constraints = [{'type': 'ineq',
                        'fun': (lambda x, g=g: -g(x)[0]),
                        'jac': (lambda x, g=g: -np.asarray(g(x)[1], dtype=float))}
                       for g in problem.constraints]
        history: List[float] = []
        best = {'value': -np.inf, 'point': x0.copy()}

        def track(x):
            x = np.clip(x, lower, upper)
            if self._violation(problem, x) <= _FEASIBILITY_TOL:
                value = problem.objective(x)[0]
                if value > best['value']:
                    best['value'], best['point'] = value, x.copy()
            history.append(best['value'])

        track(x0)
        with np.errstate(all='ignore'):
            result = optimize.minimize(neg_objective, x0, jac=True, method='SLSQP',
                                       bounds=list(zip(lower, upper)), constraints=constraints,
                                       callback=track,
                                       options={'maxiter': config.max_iterations, 'ftol': 1e-14})
        x = np.clip(result.x, lower, upper)
        track(x)
        if self._violation(problem, x) <= _FEASIBILITY_TOL and \
                problem.objective(x)[0] >= best['value'] - 1e-12:
            point = x
        else:
            point = best['point']
        value = float(problem.objective(point)[0])
        violation = self._violation(problem, point)
        stationarity = self._stationarity(problem, point, lower, upper)
        ok = violation <= _FEASIBILITY_TOL and stationarity <= config.tolerance
        report = SolverReport(status='optimal' if ok else 'not_converged',
                              iterations=int(result.get('nit', 0)), residual=stationarity,
                              method='slsqp', objective_history=history)
        report.extra['violation'] = violation
        return point, value, report

    @staticmethod
    def _violation(problem: ConcaveProblem, x: np.ndarray) -> float:
        worst = 0.0
        for g in problem.constraints:
            value = g(x)[0]
            if not math.isfinite(value):
                return math.inf
            worst = max(worst, value)
        return worst

    @staticmethod
    def _stationarity(problem: ConcaveProblem, x: np.ndarray, lower: np.ndarray,
                      upper: np.ndarray) -> float:
        """Relative KKT residual min ||grad f - J_active' mu||, mu >= 0."""
        _, grad = problem.objective(x)
        grad = np.asarray(grad, dtype=float)
        columns = []
        for g in problem.constraints:
            value, g_grad = g(x)
            if value >= -_ACTIVE_TOL * max(1.0, abs(value)):
                columns.append(np.asarray(g_grad, dtype=float))
        n = x.size
        span = np.maximum(upper - lower, 1.0)
        for j in range(n):
            unit = np.zeros(n)
            unit[j] = 1.0
            if x[j] <= lower[j] + _ACTIVE_TOL * span[j]:
                columns.append(-unit)
            if x[j] >= upper[j] - _ACTIVE_TOL * span[j]:
                columns.append(unit)
        scale = max(1.0, float(np.linalg.norm(grad)))
        if not columns:
            return float(np.linalg.norm(grad)) / scale
        _, rnorm = optimize.nnls(np.column_stack(columns), grad)
        return float(rnorm) / scale

    # ------------------------------------------------------------------
    # grid search
    # ------------------------------------------------------------------
    def grid_argmax(self, f: Callable[[float], float], lo: float, hi: float,
                    step: float) -> Tuple[float, float]:
        """Best grid point of f over lo, lo+step, ..., <= hi. Ties go to the smallest x."""
        if not lo < hi:
            raise DomainError(f"grid requires lo < hi, got [{lo}, {hi}]")
        if step <= 0:
            raise DomainError(f"grid step must be positive, got {step}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        grid = lo + step * np.arange(count)
        values = np.array([f(float(x)) for x in grid], dtype=float)
        if not np.all(np.isfinite(values)):
            bad = grid[~np.isfinite(values)][0]
            raise DomainError(f"non-finite objective on grid at x={bad}")
        best = int(np.argmax(values))
        return float(grid[best]), float(values[best])


class SubgradientReportBuilder:
    """Accumulates multiplier and residual trajectories for a dual loop."""

    def __init__(self, label: str):
        self.report = SolverReport(method=label)

    def record(self, lam: np.ndarray, residual: float) -> None:
        self.report.multipliers.append([float(v) for v in lam])
        self.report.residuals.append(float(residual))

    def halved(self) -> None:
        self.report.step_halvings += 1

    def finish(self, status: str, iterations: int) -> SolverReport:
        self.report.status = status
        self.report.iterations = iterations
        self.report.residual = self.report.residuals[-1] if self.report.residuals else 0.0
        return self.report


def neg_log(x: ArrayLike, floor: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    -ln x continued linearly below floor, which keeps dual functions
    finite and convex when a line search reaches zero multipliers.

    Returns the value and 1 / max(x, floor), the negated slope.
    """
    x = np.asarray(x, dtype=float)
    clipped = np.maximum(x, floor)
    value = np.where(x >= floor, -np.log(clipped), -math.log(floor) - (x - floor) / floor)
    return value, 1.0 / clipped


def _default_residual(lam: np.ndarray, primal: object, slack: np.ndarray) -> float:
    """Primal violation plus complementary slackness."""
    violation = float(np.max(np.maximum(-slack, 0.0), initial=0.0))
    complementary = float(np.max(np.abs(lam * slack), initial=0.0))
    return max(violation, complementary)


# Global instance
numerics_service = NumericsService()
