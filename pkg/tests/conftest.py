import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from manakov_rp.params import Channel, LinkConfig, WdmPlan

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

T = 20e-12
OMEGA = 2 * math.pi * 50e9


def cgauss(rng, shape, var=1.0):
    z = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return math.sqrt(var / 2) * (z[0] + 1j * z[1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def link250():
    return LinkConfig(length_km=250.0)


def three_channel_plan(energy=1e-3 * T, delays=((0.0, 0.0), (0.0, 0.0), (0.0, 0.0)),
                       energies_bar=None, fourth=None):
    """COI plus neighbours at +-50 GHz; ``delays`` are (pol1, pol2) in units of T."""
    eb = energies_bar or (energy,) * 3
    q = fourth or tuple(2 * energy * energy for _ in range(3))
    chans = []
    for i, (c, om) in enumerate(((0, 0.0), (1, OMEGA), (-1, -OMEGA))):
        chans.append(Channel(c, om, energy, eb[i], q[i], 2 * eb[i] ** 2,
                             delays[i][0] * T, delays[i][1] * T))
    return WdmPlan(tuple(chans), T, 50e9, 1)


@pytest.fixture
def sync_plan():
    return three_channel_plan()


@pytest.fixture
def async_plan():
    return three_channel_plan(delays=((0.0, 0.3), (0.2, -0.1), (-0.4, 0.25)))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
