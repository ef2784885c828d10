# models/joint.py
"""
Joint SWIPT downlink / wireless-powered uplink with an interferer.

All powers are normalized by N0 W. Users are indexed by ascending channel
gain, so user 0 is the weakest.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from typing_extensions import Literal

from models.optimization import SolverReport
from services.errors import DomainError

Protocol = Literal['noma', 'tdma']
MAX_JOINT_USERS = 8


@dataclass(frozen=True)
class JointScenario:
    gamma: Tuple[float, ...]
    rho0: float
    eta1: float
    alpha: float
    p_I: Optional[Tuple[float, ...]] = None
    p_I0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'gamma', tuple(float(v) for v in self.gamma))
        if self.p_I is None:
            object.__setattr__(self, 'p_I', (0.0,) * len(self.gamma))
        object.__setattr__(self, 'p_I', tuple(float(v) for v in self.p_I))
        if not self.gamma or any(not v > 0 for v in self.gamma):
            raise DomainError(f"channel gains must be positive, got {self.gamma}")
        if any(b < a for a, b in zip(self.gamma, self.gamma[1:])):
            raise DomainError("users must be indexed by ascending channel gain")
        if len(self.p_I) != len(self.gamma):
            raise DomainError("need one interference level per user")
        if any(v < 0 for v in self.p_I) or self.p_I0 < 0:
            raise DomainError("interference levels must be non-negative")
        if not self.rho0 > 0:
            raise DomainError(f"rho0 must be positive, got {self.rho0}")
        if not 0 < self.eta1 < 1:
            raise DomainError(f"eta1 must lie in (0, 1), got {self.eta1}")
        if not 0 <= self.alpha <= 1:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def n_users(self) -> int:
        return len(self.gamma)

    @property
    def interference_free(self) -> bool:
        return self.p_I0 == 0 and not any(self.p_I)

    @property
    def gains(self) -> np.ndarray:
        return np.array(self.gamma)

    @property
    def interference(self) -> np.ndarray:
        return np.array(self.p_I)

    @property
    def uplink_weights(self) -> np.ndarray:
        """gamma_n (gamma_n rho0 + p_I,n): energy reaching user n, times its uplink gain."""
        g = self.gains
        return g * (g * self.rho0 + self.interference)

    def to_dict(self) -> Dict:
        return {'gamma': list(self.gamma), 'rho0': self.rho0, 'eta1': self.eta1,
                'alpha': self.alpha, 'p_I': list(self.p_I), 'p_I0': self.p_I0}


@dataclass
class JointSolution:
    protocol: Protocol
    T: float
    R: float
    theta: np.ndarray
    p: Optional[np.ndarray] = None  # NOMA downlink powers
    t: Optional[np.ndarray] = None  # TDMA downlink slots
    downlink_rates: Optional[np.ndarray] = None
    uplink_rate: float = 0.0
    report: SolverReport = field(default_factory=SolverReport)

    def to_dict(self) -> Dict:
        return {
            'protocol': self.protocol,
            'T': self.T,
            'R': self.R,
            'theta': list(map(float, self.theta)),
            'p': None if self.p is None else list(map(float, self.p)),
            't': None if self.t is None else list(map(float, self.t)),
            'downlink_rates': None if self.downlink_rates is None else list(map(float, self.downlink_rates)),
            'uplink_rate': self.uplink_rate,
            'report': self.report.to_dict(),
        }
