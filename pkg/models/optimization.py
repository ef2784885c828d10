# models/optimization.py
"""
Problem and report types consumed by the numerics service.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Literal

from services.errors import DomainError

Sense = Literal['<=', '=', '>=']
Evaluator = Callable[[np.ndarray], Tuple[float, np.ndarray]]

_SCHEDULE_CHECK = 50


@dataclass(frozen=True)
class RootBracket:
    """Interval [lo, hi] on which a scalar function changes sign."""
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DomainError(f"bracket ends must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise DomainError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")


@dataclass
class LinearConstraint:
    coefficients: Sequence[float]
    sense: Sense
    rhs: float


@dataclass
class LinearProgram:
    """
    Maximize objective·x subject to the constraints and lower <= x <= upper.

    Bounds default to x >= 0 with no upper limit. Use -inf / inf for
    explicitly unbounded directions.
    """
    objective: Sequence[float]
    constraints: List[LinearConstraint] = field(default_factory=list)
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n_vars
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        return lower, upper


@dataclass
class LPResult:
    point: Optional[np.ndarray]
    objective: Optional[float]
    status: str  # 'optimal', 'infeasible', 'unbounded'
    iterations: int = 0

    def to_dict(self) -> Dict:
        return {
            'point': None if self.point is None else self.point.tolist(),
            'objective': self.objective,
            'status': self.status,
            'iterations': self.iterations,
        }


@dataclass
class SubgradientConfig:
    """
    Settings for the projected-subgradient multiplier loops and the
    concave engine's iteration budget.

    The default step rule is step(k) = step_scale / sqrt(k), which is
    non-increasing and sums to infinity.
    """
    step_scale: float = 0.1
    max_iterations: int = 2000
    tolerance: float = 1e-6
    damping: float = 0.5
    step_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise DomainError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise DomainError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.step_scale <= 0:
            raise DomainError(f"step_scale must be positive, got {self.step_scale}")
        if not 0 < self.damping <= 1:
            raise DomainError(f"damping must lie in (0, 1], got {self.damping}")
        if self.step_schedule is not None:
            steps = [self.step_schedule(k) for k in range(1, _SCHEDULE_CHECK + 1)]
            if not all(math.isfinite(s) and s > 0 for s in steps):
                raise DomainError("step_schedule must return positive finite steps")
            if any(later > earlier for earlier, later in zip(steps, steps[1:])):
                raise DomainError("step_schedule must be non-increasing")

    def step(self, k: int) -> float:
        """Step size for iteration k (1-based)."""
        if self.step_schedule is not None:
            return self.step_schedule(k)
        return self.step_scale / math.sqrt(max(k, 1))


@dataclass
class ConcaveProblem:
    """
    Maximize a concave objective subject to convex constraints g(x) <= 0
    inside a box.

    Each evaluator maps a point to (value, gradient).
    """
    objective: Evaluator
    constraints: List[Evaluator]
    lower: Sequence[float]
    upper: Sequence[float]
    x0: Optional[Sequence[float]] = None

    @property
    def dimension(self) -> int:
        return len(self.lower)


@dataclass
class SolverReport:
    """Convergence diagnostics attached to every iterative solve."""
    status: str = 'optimal'  # 'optimal' or 'not_converged'
    iterations: int = 0
    residual: float = 0.0
    method: str = ''
    multipliers: List[List[float]] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    objective_history: List[float] = field(default_factory=list)
    step_halvings: int = 0
    notes: List[str] = field(default_factory=list)
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == 'optimal'

    def to_dict(self) -> Dict:
        return {
            'status': self.status,
            'iterations': self.iterations,
            'residual': self.residual,
            'method': self.method,
            'step_halvings': self.step_halvings,
            'notes': list(self.notes),
            **self.extra,
        }
