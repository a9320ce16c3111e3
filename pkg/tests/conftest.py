"""
Test hooks: the slow and benchmark markers and shared fixtures.
"""

import os

import numpy as np
import pytest

from wepsmw.discretization import DiscreteProblem

from .oracles import SMALL_CONFIG, layered_geometry, synthetic_geometry


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow acceptance tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test (needs --runslow)")
    config.addinivalue_line(
        "markers", "benchmark: needs the benchmark geometry (set WEPSMW_BENCHMARK=1)"
    )


def pytest_collection_modifyitems(config, items):
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    skip_benchmark = pytest.mark.skip(reason="set WEPSMW_BENCHMARK=1")
    for item in items:
        if "slow" in item.keywords and not config.getoption("--runslow"):
            item.add_marker(skip_slow)
        if "benchmark" in item.keywords and os.environ.get("WEPSMW_BENCHMARK") != "1":
            item.add_marker(skip_benchmark)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(params=[5, 7, 9])
def small_problem(request) -> DiscreteProblem:
    return DiscreteProblem(layered_geometry(), request.param)


@pytest.fixture
def problem9() -> DiscreteProblem:
    return DiscreteProblem(layered_geometry(), 9)


@pytest.fixture
def synthetic_problem() -> DiscreteProblem:
    return DiscreteProblem(synthetic_geometry(), 15)


@pytest.fixture
def small_config(tmp_path) -> str:
    """Path of a complete configuration for a 9 x 13 grid."""
    path = tmp_path / "small.ini"
    path.write_text(SMALL_CONFIG)
    return str(path)
