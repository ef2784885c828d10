# models/market.py
"""
Energy and time-bandwidth market between one base station and N users.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from services.errors import DomainError

DEMAND_FLOOR = 1e-12


@dataclass(frozen=True)
class Market:
    """
    a_n weights each user's satisfaction, G_n = L_n |H_n|^2 / N0 is the
    normalized gain, E_BS and Q are the totals on sale.
    """
    a: Tuple[float, ...]
    G: Tuple[float, ...]
    E_BS: float
    Q: float

    def __post_init__(self):
        object.__setattr__(self, 'a', tuple(float(v) for v in self.a))
        object.__setattr__(self, 'G', tuple(float(v) for v in self.G))
        if not self.a or len(self.a) != len(self.G):
            raise DomainError(f"need one weight and one gain per user, got {len(self.a)} and {len(self.G)}")
        if any(not v > 0 for v in self.a):
            raise DomainError(f"satisfaction weights must be positive, got {self.a}")
        if any(not v > 0 for v in self.G):
            raise DomainError(f"channel gains must be positive, got {self.G}")
        if not (self.E_BS > 0 and self.Q > 0):
            raise DomainError(f"E_BS and Q must be positive, got ({self.E_BS}, {self.Q})")

    @property
    def n_users(self) -> int:
        return len(self.a)

    @property
    def weights(self) -> np.ndarray:
        return np.array(self.a)

    @property
    def gains(self) -> np.ndarray:
        return np.array(self.G)

    def to_dict(self) -> Dict:
        return {'a': list(self.a), 'G': list(self.G), 'E_BS': self.E_BS, 'Q': self.Q}


@dataclass(frozen=True)
class Prices:
    c1: float  # per unit of energy
    c2: float  # per unit of time-bandwidth

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise DomainError(f"prices must be positive, got ({self.c1}, {self.c2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2])

    def to_dict(self) -> Dict:
        return {'c1': self.c1, 'c2': self.c2}


@dataclass(frozen=True)
class Demand:
    E: Tuple[float, ...]
    q: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'E', tuple(float(v) for v in self.E))
        object.__setattr__(self, 'q', tuple(float(v) for v in self.q))
        if len(self.E) != len(self.q):
            raise DomainError("energy and resource demands must have one entry per user")
        if any(v < 0 for v in self.E + self.q):
            raise DomainError("demands must be non-negative")

    @property
    def total_energy(self) -> float:
        return float(sum(self.E))

    @property
    def total_resource(self) -> float:
        return float(sum(self.q))

    def active(self) -> np.ndarray:
        """Users whose demands sit above the floor in both goods."""
        E, q = np.array(self.E), np.array(self.q)
        return (E > 10 * DEMAND_FLOOR) & (q > 10 * DEMAND_FLOOR)

    def to_dict(self) -> Dict:
        return {'E': list(self.E), 'q': list(self.q)}
