# models/scenario.py
"""
Physical-layer scenario types: path-loss models, user links, the
multi-user network scenario and the interference geometry.
"""

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple, Union

import numpy as np

from services.errors import DomainError

SPEED_OF_LIGHT = 2.9979e8


def watts_to_dbm(watts: float) -> float:
    return 10.0 * float(np.log10(watts)) + 30.0


@dataclass(frozen=True)
class TgnIndoor:
    """Two-slope indoor model: free-space decay to the breakpoint, steeper after it."""
    carrier_hz: float
    breakpoint_m: float = 5.0
    slope_before: float = 2.0
    slope_after: float = 3.5

    def __post_init__(self):
        _require_positive(carrier_hz=self.carrier_hz, breakpoint_m=self.breakpoint_m,
                          slope_before=self.slope_before, slope_after=self.slope_after)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class PowerLaw:
    k: float
    exponent: float

    def __post_init__(self):
        _require_positive(k=self.k, exponent=self.exponent)


@dataclass(frozen=True)
class Bounded:
    exponent: float

    def __post_init__(self):
        _require_positive(exponent=self.exponent)


PathLossModel = Union[TgnIndoor, PowerLaw, Bounded]


@dataclass(frozen=True)
class UserLink:
    """One user's link to the base station. gain g is the round-trip gain gamma squared."""
    distance_m: float
    pathloss: float
    fading_power: float = 1.0
    antenna_gain: float = 1.0

    def __post_init__(self):
        _require_positive(distance_m=self.distance_m, pathloss=self.pathloss,
                          antenna_gain=self.antenna_gain)
        if not self.fading_power >= 0:
            raise DomainError(f"fading_power must be non-negative, got {self.fading_power}")

    @property
    def gamma(self) -> float:
        return self.pathloss * self.fading_power * self.antenna_gain

    @property
    def g(self) -> float:
        return self.gamma ** 2

    def to_dict(self) -> Dict:
        return {
            'distance_m': self.distance_m,
            'pathloss': self.pathloss,
            'fading_power': self.fading_power,
            'antenna_gain': self.antenna_gain,
            'gamma': self.gamma,
            'g': self.g,
        }


@dataclass(frozen=True)
class NetworkScenario:
    """
    Harvest-then-transmit network: one base station radiating P0 for a
    fraction T of the slot, users transmitting in the rest.
    """
    P0_watts: float
    N0W_watts: float
    eta1: float
    eta2: float
    users: Tuple[UserLink, ...]
    original_indices: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if not self.users:
            raise DomainError("scenario needs at least one user")
        object.__setattr__(self, 'users', tuple(self.users))
        _require_positive(P0_watts=self.P0_watts, N0W_watts=self.N0W_watts)
        for name, value in (('eta1', self.eta1), ('eta2', self.eta2)):
            if not 0 < value <= 1:
                raise DomainError(f"{name} must lie in (0, 1], got {value}")
        if self.original_indices is None:
            object.__setattr__(self, 'original_indices', tuple(range(len(self.users))))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def rho0(self) -> float:
        return self.P0_watts / self.N0W_watts

    @property
    def eta(self) -> float:
        return self.eta1 * self.eta2

    @property
    def gains(self) -> np.ndarray:
        return np.array([user.g for user in self.users])

    @property
    def harvest_coefficients(self) -> np.ndarray:
        """c_n = eta * rho0 * g_n, the per-user received SNR scale after harvesting."""
        return self.eta * self.rho0 * self.gains

    @property
    def P0_dbm(self) -> float:
        return watts_to_dbm(self.P0_watts)

    @property
    def N0W_dbm(self) -> float:
        return watts_to_dbm(self.N0W_watts)

    def with_power(self, P0_watts: float) -> 'NetworkScenario':
        return replace(self, P0_watts=P0_watts)

    def to_dict(self) -> Dict:
        return {
            'P0_dbm': self.P0_dbm,
            'N0W_dbm': self.N0W_dbm,
            'eta1': self.eta1,
            'eta2': self.eta2,
            'users': [user.to_dict() for user in self.users],
            'original_indices': list(self.original_indices),
        }


@dataclass(frozen=True)
class Deterministic:
    """Known received-energy SNR X = eta2 * E * gamma / N0W."""
    X: float

    def __post_init__(self):
        _require_positive(X=self.X)


@dataclass(frozen=True)
class GammaStochastic:
    """X ~ Gamma(shape=kappa, scale=zeta)."""
    kappa: float
    zeta: float

    def __post_init__(self):
        _require_positive(kappa=self.kappa, zeta=self.zeta)

    @property
    def mean(self) -> float:
        return self.kappa * self.zeta


EnergyArrival = Union[Deterministic, GammaStochastic]


@dataclass(frozen=True)
class InterferenceScenario:
    """A single interferer at distance D0 from the base station, on the user line."""
    p_IS: float
    D0_m: float
    p_I: Tuple[float, ...]
    p_I0: float
    exponent: float

    def __post_init__(self):
        object.__setattr__(self, 'p_I', tuple(float(v) for v in self.p_I))
        if self.p_IS < 0 or self.D0_m < 0 or self.p_I0 < 0 or self.exponent < 0 \
                or any(v < 0 for v in self.p_I):
            raise DomainError("interference parameters must be non-negative")

    @classmethod
    def none(cls, n_users: int) -> 'InterferenceScenario':
        return cls(p_IS=0.0, D0_m=0.0, p_I=(0.0,) * n_users, p_I0=0.0, exponent=0.0)


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value}")
