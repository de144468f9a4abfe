import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gapstab.models import model_zoo

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def paramagnet6():
    return model_zoo("paramagnet", N=6)


@pytest.fixture(scope="session")
def aklt_open5():
    return model_zoo("aklt_open", N=5)


@pytest.fixture(scope="session")
def aklt_ring6():
    return model_zoo("aklt_periodic", N=6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
