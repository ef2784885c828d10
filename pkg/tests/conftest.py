# tests/conftest.py

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.channel_service import channel_service  # noqa: E402
from services.joint_service import joint_service  # noqa: E402
from services.relay_service import relay_service  # noqa: E402

EXAMPLE1_PATHLOSSES = (2.4067e-6, 2.156e-6)
EXAMPLE2_PATHLOSSES = (3.7808e-5, 3.5793e-7)


@pytest.fixture
def example1():
    """Two users at 9.9 m and 10.1 m, P0 = 30 dBm, N0W = -114 dBm, eta = 0.5 * 0.38."""
    return channel_service.scenario_from_pathloss(list(EXAMPLE1_PATHLOSSES))


@pytest.fixture
def example2():
    """Strongly asymmetric pair, 6 m and 14 m."""
    return channel_service.scenario_from_pathloss(list(EXAMPLE2_PATHLOSSES))


@pytest.fixture
def relay_link():
    return relay_service.relay_geometry([2.0, 3.0, 4.0], psm_db=20.0, seed=3)


@pytest.fixture
def joint_free():
    """Asymmetric interference-free pair at 5 m and 1 m, rho0 = 40 dB."""
    return joint_service.joint_scenario([5.0, 1.0], rho0_db=40.0, eta1=0.5, alpha=0.8)


@pytest.fixture
def with_coefficients():
    """Factory: scenario whose harvest coefficients eta * rho0 * g_n equal the given values."""
    def build(coefficients):
        unit = channel_service.scenario_from_pathloss([1.0])
        scale = float(unit.harvest_coefficients[0])
        return channel_service.scenario_from_pathloss([(c / scale) ** 0.5 for c in coefficients])
    return build
