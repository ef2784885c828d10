# models/relay.py
"""
Two-hop multicarrier amplify-and-forward link whose relay is powered by
power splitting: a fraction theta of the received signal is harvested,
1 - theta goes to information processing.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from services.errors import DomainError


@dataclass(frozen=True)
class RelayLink:
    h_s: Tuple[float, ...]  # |h_s,i|^2, source to relay
    h_r: Tuple[float, ...]  # |h_r,i|^2, relay to destination
    W: Tuple[float, ...]
    N0: float
    P_sm: float
    P_rm: float
    P_r0: float = 0.0
    eta1: float = 0.3

    def __post_init__(self):
        for name in ('h_s', 'h_r', 'W'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not self.h_s or not (len(self.h_s) == len(self.h_r) == len(self.W)):
            raise DomainError("gains and bandwidths need one entry per channel")
        if any(v < 0 for v in self.h_s + self.h_r):
            raise DomainError("channel gains must be non-negative")
        if any(not v > 0 for v in self.W):
            raise DomainError(f"bandwidths must be positive, got {self.W}")
        if not (self.N0 > 0 and self.P_sm > 0 and self.P_rm > 0):
            raise DomainError("N0 and the power caps must be positive")
        if self.P_r0 < 0:
            raise DomainError(f"P_r0 must be non-negative, got {self.P_r0}")
        if not 0 < self.eta1 < 1:
            raise DomainError(f"eta1 must lie in (0, 1), got {self.eta1}")

    @property
    def n_channels(self) -> int:
        return len(self.W)

    @property
    def noise(self) -> np.ndarray:
        return self.N0 * np.array(self.W)

    def source_scale(self, theta: float) -> np.ndarray:
        """SNR per watt on the first hop after splitting off theta."""
        return (1.0 - theta) * np.array(self.h_s) / self.noise

    def relay_scale(self) -> np.ndarray:
        return np.array(self.h_r) / self.noise

    def to_dict(self) -> Dict:
        return {'h_s': list(self.h_s), 'h_r': list(self.h_r), 'W': list(self.W), 'N0': self.N0,
                'P_sm': self.P_sm, 'P_rm': self.P_rm, 'P_r0': self.P_r0, 'eta1': self.eta1}


@dataclass(frozen=True)
class RelayAllocation:
    P_s: Tuple[float, ...]
    P_r: Tuple[float, ...]
    theta: float

    def __post_init__(self):
        object.__setattr__(self, 'P_s', tuple(max(float(v), 0.0) if v > -1e-12 else float(v)
                                              for v in self.P_s))
        object.__setattr__(self, 'P_r', tuple(max(float(v), 0.0) if v > -1e-12 else float(v)
                                              for v in self.P_r))
        if any(v < 0 for v in self.P_s + self.P_r):
            raise DomainError("powers must be non-negative")
        if not 0 <= self.theta <= 1:
            raise DomainError(f"theta must lie in [0, 1], got {self.theta}")

    def to_dict(self) -> Dict:
        return {'P_s': list(self.P_s), 'P_r': list(self.P_r), 'theta': self.theta}
