import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from debye_bie.surface import sphere_grid, torus_grid  # noqa: E402


@pytest.fixture(scope="session")
def sphere16():
    return sphere_grid(16)


@pytest.fixture(scope="session")
def sphere24():
    return sphere_grid(24)


@pytest.fixture(scope="session")
def torus32():
    return torus_grid(2.0, 0.5, 32, 32)


@pytest.fixture(scope="session")
def torus_system32(torus32):
    from debye_bie.solver import BoundarySystem

    return BoundarySystem(torus32, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="also run tests marked slow (minutes to tens of minutes each)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("DEBYE_BIE_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; enable with --runslow or DEBYE_BIE_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
