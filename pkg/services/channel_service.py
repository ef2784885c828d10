# services/channel_service.py
"""
Channel models and scenario builders.

Path loss (power law, bounded, TGn indoor), Rayleigh fading draws, the
ring deployment behind the Monte-Carlo runs, and the fixed-pathloss
examples. Built scenarios are normalized so users come sorted by gain.
"""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from models.scenario import (Bounded, InterferenceScenario, NetworkScenario, PathLossModel,
                             PowerLaw, TgnIndoor, UserLink)
from services.errors import DomainError

logger = logging.getLogger(__name__)

# Ring deployment used by the Monte-Carlo trend runs
RING_INNER_M = 5.0
RING_OUTER_M = 20.0
RING_CARRIER_HZ = 470e6
RING_ANTENNA_GAIN_DB = 7.5


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


class ChannelService:
    """
    Builds scenarios: path loss, ring topologies, Rayleigh fading and the
    gain ordering the NOMA solvers rely on.

    Randomness always comes from a caller-supplied seed.
    """

    def pathloss(self, model: PathLossModel, d_m: float) -> float:
        if not d_m > 0:
            raise DomainError(f"distance must be positive, got {d_m}")
        if isinstance(model, PowerLaw):
            return model.k * d_m ** (-model.exponent)
        if isinstance(model, Bounded):
            return 1.0 / (1.0 + d_m ** model.exponent)
        if isinstance(model, TgnIndoor):
            near = (model.wavelength_m / (4.0 * math.pi)) ** 2
            if d_m <= model.breakpoint_m:
                return near * d_m ** (-model.slope_before)
            at_breakpoint = near * model.breakpoint_m ** (-model.slope_before)
            return at_breakpoint * (d_m / model.breakpoint_m) ** (-model.slope_after)
        raise DomainError(f"unknown path-loss model {model!r}")

    def sample_ring_topology(self, r1_m: float, r2_m: float, n: int, seed: int) -> List[float]:
        """Distances of n users placed uniformly over the annulus r1 <= d <= r2."""
        if not (0 < r1_m < r2_m):
            raise DomainError(f"ring radii must satisfy 0 < r1 < r2, got ({r1_m}, {r2_m})")
        if n < 1:
            raise DomainError(f"need at least one user, got {n}")
        rng = np.random.default_rng(seed)
        squared = rng.uniform(r1_m ** 2, r2_m ** 2, size=n)
        return np.clip(np.sqrt(squared), r1_m, r2_m).tolist()

    def sample_rayleigh_power(self, seed: int, size: Optional[int] = None):
        """|H|^2 for H ~ CN(0, 1), i.e. Exponential(1). Scalar unless size is given."""
        rng = np.random.default_rng(seed)
        draw = rng.exponential(1.0, size=size)
        return float(draw) if size is None else draw

    def make_user(self, model: PathLossModel, d_m: float, fading_power: float = 1.0,
                  antenna_gain: float = 1.0) -> UserLink:
        return UserLink(distance_m=d_m, pathloss=self.pathloss(model, d_m),
                        fading_power=fading_power, antenna_gain=antenna_gain)

    def normalize_scenario(self, scenario: NetworkScenario) -> NetworkScenario:
        """
        Reindex users so that g is non-increasing.

        The sort is stable, so tied users keep their original order, and
        original_indices keeps the mapping back to the caller's indexing.
        """
        if not scenario.users:
            raise DomainError("scenario has no users")
        order = np.argsort(-scenario.gains, kind='stable')
        users = tuple(scenario.users[i] for i in order)
        indices = tuple(scenario.original_indices[i] for i in order)
        return NetworkScenario(P0_watts=scenario.P0_watts, N0W_watts=scenario.N0W_watts,
                               eta1=scenario.eta1, eta2=scenario.eta2, users=users,
                               original_indices=indices)

    def sample_scenario(self, n_users: int, seed: int, P0_dbm: float = 30.0, N0W_dbm: float = -114.0,
                        eta1: float = 0.5, eta2: float = 0.38, model: Optional[PathLossModel] = None,
                        r1_m: float = RING_INNER_M, r2_m: float = RING_OUTER_M,
                        antenna_gain_db: float = RING_ANTENNA_GAIN_DB) -> NetworkScenario:
        """One ring deployment with Rayleigh fading, already sorted by gain."""
        model = model or TgnIndoor(carrier_hz=RING_CARRIER_HZ)
        rng = np.random.default_rng(seed)
        distances = self.sample_ring_topology(r1_m, r2_m, n_users, int(rng.integers(2 ** 31)))
        fading = self.sample_rayleigh_power(int(rng.integers(2 ** 31)), size=n_users)
        # both antennas at the same gain
        gain = db_to_linear(2.0 * antenna_gain_db)
        users = [self.make_user(model, d, float(h), gain) for d, h in zip(distances, fading)]
        scenario = NetworkScenario(P0_watts=dbm_to_watts(P0_dbm), N0W_watts=dbm_to_watts(N0W_dbm),
                                   eta1=eta1, eta2=eta2, users=tuple(users))
        return self.normalize_scenario(scenario)

    def scenario_from_pathloss(self, pathlosses: Sequence[float], P0_dbm: float = 30.0,
                               N0W_dbm: float = -114.0, eta1: float = 0.5, eta2: float = 0.38,
                               distances: Optional[Sequence[float]] = None) -> NetworkScenario:
        """Scenario from path-loss values taken as given (unit fading, 0 dB antennas)."""
        distances = distances or [1.0] * len(pathlosses)
        users = tuple(UserLink(distance_m=d, pathloss=L) for d, L in zip(distances, pathlosses))
        return NetworkScenario(P0_watts=dbm_to_watts(P0_dbm), N0W_watts=dbm_to_watts(N0W_dbm),
                               eta1=eta1, eta2=eta2, users=users)

    def interference_scenario(self, p_IS: float, D0_m: float, distances: Sequence[float],
                              exponent: float) -> InterferenceScenario:
        """Interferer on the user line at D0 from the base station."""
        p_I = []
        for d in distances:
            if d >= D0_m:
                raise DomainError(f"user at {d} m is not between the base station and the interferer")
            p_I.append(p_IS / (1.0 + (D0_m - d) ** exponent))
        return InterferenceScenario(p_IS=p_IS, D0_m=D0_m, p_I=tuple(p_I),
                                    p_I0=p_IS / (1.0 + D0_m ** exponent), exponent=exponent)


# Global instance
channel_service = ChannelService()
