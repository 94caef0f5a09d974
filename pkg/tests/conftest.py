import os
import sys

import numpy as np
import pytest

# Packages are imported by name from the repository root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.geometry import PointCloud  # noqa: E402
from utils.logger import set_quiet_mode  # noqa: E402

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance experiment (needs --runslow)")
    set_quiet_mode()


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def small_pair(rng):
    """Reference cloud and a rigidly moved, shuffled copy of it."""
    reference = rng.normal(size=(8, 3)) * np.array([3.0, 1.5, 0.7])
    query = reference[rng.permutation(8)][:6] + np.array([1.0, -2.0, 0.5])
    return PointCloud(query, "query"), PointCloud(reference, "reference")
