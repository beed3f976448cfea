# tests/conftest.py
import numpy as np
import pytest

from geoapportion.synthgen import RngSpec, make_ground_truth


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def planted(seed: int, n: int = 1000, J: int = 8, K: int = 3, process: str = "ar1"):
    """Noiseless data with one pure-source record per source appended."""
    return make_ground_truth(n, J, K, process, RngSpec.for_replicate(seed, 0), plant_corners=True)


@pytest.fixture
def planted_data():
    return planted(11)


@pytest.fixture
def triangle_profiles():
    """Three well-separated simplex rows in J = 5."""
    return np.array([
        [0.50, 0.20, 0.10, 0.10, 0.10],
        [0.05, 0.60, 0.05, 0.20, 0.10],
        [0.10, 0.05, 0.55, 0.05, 0.25],
    ])
