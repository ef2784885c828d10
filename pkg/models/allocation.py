# models/allocation.py
"""
Decision variables and results of the uplink TDMA, NOMA and
proportional-fairness solvers.

User indices are 0-based everywhere in code.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.optimization import SolverReport
from services.errors import DomainError

_TIME_SLACK = 1e-9


@dataclass(frozen=True)
class TimeAllocation:
    """Harvest time T followed by per-user uplink slots t_n."""
    T: float
    t: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 't', tuple(float(v) for v in self.t))
        if not self.T > 0:
            raise DomainError(f"harvest time must be positive, got {self.T}")
        if any(v < 0 for v in self.t):
            raise DomainError(f"slot lengths must be non-negative, got {self.t}")
        if self.T + sum(self.t) > 1.0 + _TIME_SLACK:
            raise DomainError(f"time budget exceeded: T + sum(t) = {self.T + sum(self.t)}")

    @property
    def total(self) -> float:
        return self.T + sum(self.t)

    def to_dict(self) -> Dict:
        return {'T': self.T, 't': list(self.t)}


@dataclass(frozen=True)
class RateProfile:
    """Shares b_n of the sum throughput each user must receive."""
    b: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'b', tuple(float(v) for v in self.b))
        if not self.b or any(not v > 0 for v in self.b):
            raise DomainError(f"rate-profile shares must be positive, got {self.b}")
        if abs(sum(self.b) - 1.0) > 1e-9:
            raise DomainError(f"rate-profile shares must sum to 1, got {sum(self.b)}")

    @classmethod
    def equal(cls, n_users: int) -> 'RateProfile':
        return cls(b=(1.0 / n_users,) * n_users)


@dataclass(frozen=True)
class DecodingPermutation:
    """SIC decoding order: order[0] is decoded first and sees every other user as interference."""
    order: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, 'order', tuple(int(v) for v in self.order))
        if sorted(self.order) != list(range(len(self.order))):
            raise DomainError(f"not a permutation of 0..{len(self.order) - 1}: {self.order}")

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class TSConfig:
    """Time-sharing configuration: permutation rows with fractions tau of the uplink phase."""
    A: Tuple[DecodingPermutation, ...]
    tau: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'A', tuple(p if isinstance(p, DecodingPermutation)
                                            else DecodingPermutation(tuple(p)) for p in self.A))
        object.__setattr__(self, 'tau', tuple(max(float(v), 0.0) if v > -1e-12 else float(v)
                                              for v in self.tau))
        if not self.A:
            raise DomainError("time-sharing configuration needs at least one permutation")
        if len(self.A) != len(self.tau):
            raise DomainError(f"{len(self.A)} permutations but {len(self.tau)} fractions")
        if len({len(p) for p in self.A}) != 1:
            raise DomainError("all permutations must cover the same users")
        if any(v < 0 for v in self.tau):
            raise DomainError(f"time-sharing fractions must be non-negative, got {self.tau}")
        if sum(self.tau) > 1.0 + _TIME_SLACK:
            raise DomainError(f"time-sharing fractions sum to {sum(self.tau)} > 1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([p.order for p in self.A], dtype=int)

    def to_dict(self) -> Dict:
        return {'A': [list(p.order) for p in self.A], 'tau': list(self.tau)}


@dataclass
class PFSolution:
    """Proportional-fairness operating point."""
    T: float
    rates: np.ndarray
    objective: float
    t: Optional[np.ndarray] = None
    multipliers: Optional[np.ndarray] = None
    mu: Optional[float] = None
    report: SolverReport = field(default_factory=SolverReport)

    def to_dict(self) -> Dict:
        return {
            'T': self.T,
            'rates': list(map(float, self.rates)),
            'objective': self.objective,
            't': None if self.t is None else list(map(float, self.t)),
            'mu': self.mu,
            'report': self.report.to_dict(),
        }


@dataclass
class SchemeResult:
    """One of the uplink NOMA schemes evaluated on a scenario."""
    scheme: str
    T: float
    rates: np.ndarray
    objective: float
    ts: Optional[TSConfig] = None
    report: SolverReport = field(default_factory=SolverReport)

    def to_dict(self) -> Dict:
        return {
            'scheme': self.scheme,
            'T': self.T,
            'rates': list(map(float, self.rates)),
            'objective': self.objective,
            'ts': None if self.ts is None else self.ts.to_dict(),
            'report': self.report.to_dict(),
        }


def as_permutations(orders: Sequence[Sequence[int]]) -> List[DecodingPermutation]:
    return [DecodingPermutation(tuple(order)) for order in orders]
