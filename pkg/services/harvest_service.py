# services/harvest_service.py
"""
Single-user harvest-then-transmit: the node harvests for T and spends the
energy transmitting during 1 - T.
"""

import logging
import math
from typing import Optional, Union

import numpy as np
from scipy import optimize

from models.scenario import Deterministic, EnergyArrival, GammaStochastic
from services.errors import DomainError
from services.numerics_service import numerics_service

logger = logging.getLogger(__name__)

# |X - 1| below this uses the limit T* = 1 - 1/e
_UNIT_SNR_GUARD = 1e-8

POLICIES = ('optimal', 'fixed', 'half')


def _throughput(X: np.ndarray, T: np.ndarray) -> np.ndarray:
    X, T = np.broadcast_arrays(np.asarray(X, dtype=float), np.asarray(T, dtype=float))
    out = np.zeros(X.shape)
    live = (T > 0) & (T < 1)
    out[live] = (1.0 - T[live]) * np.log2(1.0 + X[live] * T[live] / (1.0 - T[live]))
    return out


class HarvestService:

    def throughput_single(self, X: float, T: float) -> float:
        """(1-T) log2(1 + X T / (1-T)) in bits/s/Hz."""
        if not X > 0:
            raise DomainError(f"X must be positive, got {X}")
        if not 0 <= T < 1:
            raise DomainError(f"T must lie in [0, 1), got {T}")
        return float(_throughput(X, T))

    def optimal_T_deterministic(self, X: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Closed-form maximizer of throughput_single over T.

        Vectorized over X. X = 1 is a removable singularity whose limit is
        1 - 1/e.
        """
        arr = np.asarray(X, dtype=float)
        if np.any(~(arr > 0)):
            raise DomainError(f"X must be positive, got {X!r}")
        flat = np.atleast_1d(arr)
        shifted = flat - 1.0
        w = np.atleast_1d(numerics_service.lambert_w0(shifted / math.e))
        near_one = np.abs(shifted) < _UNIT_SNR_GUARD
        safe = np.where(near_one, 1.0, shifted)
        T = np.where(near_one, 1.0 - 1.0 / math.e, (safe - w) / (safe * (w + 1.0)))
        return float(T[0]) if arr.ndim == 0 else T.reshape(arr.shape)

    def optimal_T_stochastic_high_snr(self, kappa: float, zeta: float) -> float:
        if not (kappa > 0 and zeta > 0):
            raise DomainError(f"kappa and zeta must be positive, got ({kappa}, {zeta})")
        w = numerics_service.lambert_w0(zeta * math.exp(numerics_service.digamma(kappa) - 1.0))
        return 1.0 / (w + 1.0)

    def expected_throughput_low_snr(self, kappa: float, zeta: float, T: float) -> float:
        if not (kappa > 0 and zeta > 0):
            raise DomainError(f"kappa and zeta must be positive, got ({kappa}, {zeta})")
        if not 0 <= T <= 1:
            raise DomainError(f"T must lie in [0, 1], got {T}")
        return T * kappa * zeta / math.log(2.0)

    def optimal_T(self, arrival: EnergyArrival) -> float:
        if isinstance(arrival, Deterministic):
            return self.optimal_T_deterministic(arrival.X)
        if isinstance(arrival, GammaStochastic):
            return self.optimal_T_stochastic_high_snr(arrival.kappa, arrival.zeta)
        raise DomainError(f"unknown energy arrival {arrival!r}")

    def expected_throughput_mc(self, kappa: float, zeta: float, policy: str = 'optimal',
                               samples: int = 10000, seed: int = 0, T: Optional[float] = None) -> float:
        """
        Sample-mean throughput under Gamma(kappa, zeta) energy arrivals.

        'optimal' picks T per sample from its realized X, 'fixed' uses T
        (default: the high-SNR closed form) for every sample and 'half'
        uses T = 0.5.
        """
        if policy not in POLICIES:
            raise DomainError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        X = np.random.default_rng(seed).gamma(kappa, zeta, size=samples)
        if policy == 'optimal':
            chosen = self.optimal_T_deterministic(X)
        elif policy == 'fixed':
            chosen = self.optimal_T_stochastic_high_snr(kappa, zeta) if T is None else T
        else:
            chosen = 0.5
        return float(np.mean(_throughput(X, chosen)))

    def optimal_T_stochastic_numeric(self, kappa: float, zeta: float, samples: int = 10000,
                                     seed: int = 0) -> float:
        """T maximizing the sample-mean throughput; a yardstick for the high-SNR closed form."""
        X = np.random.default_rng(seed).gamma(kappa, zeta, size=samples)
        result = optimize.minimize_scalar(lambda T: -float(np.mean(_throughput(X, T))),
                                          bounds=(1e-9, 1.0 - 1e-9), method='bounded',
                                          options={'xatol': 1e-10})
        logger.debug("stochastic optimum T=%.6f (closed form %.6f)", result.x,
                     self.optimal_T_stochastic_high_snr(kappa, zeta))
        return float(result.x)


# Global instance
harvest_service = HarvestService()
