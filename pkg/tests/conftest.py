import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from uavnoma import ao  # noqa: E402
from uavnoma.config import SystemParams, default_scenario  # noqa: E402
from uavnoma.dep import BlocklengthPair  # noqa: E402
from uavnoma.link import LinkState, PowerTriple  # noqa: E402


@pytest.fixture(scope="session")
def scenario():
    return default_scenario()


@pytest.fixture(scope="session")
def default_report(scenario):
    """Joint optimisation on the default scenario (shared by several modules)."""
    sc = scenario
    return ao.solve(sc.params, sc.geometry, sc.link, settings=sc.solver)


@pytest.fixture(scope="session")
def moderate():
    """Unit-noise instance whose DEPs sit in a readable range (1e-15 .. 1e-1)."""
    params = SystemParams(p_max=100.0, e_tot=1e5, noise_bs=1.0, noise_dev=1.0, beta0_sq=1.0, eps_uav_max=0.4)
    link = LinkState(1.0, 0.5, 0.2, 1.0, 2.0)
    return params, link, PowerTriple(30.0, 3.0, 20.0), BlocklengthPair(60, 60)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def say(capsys):
    """Print a line straight to the terminal, bypassing capture."""

    def _say(text):
        with capsys.disabled():
            print(text)

    return _say
