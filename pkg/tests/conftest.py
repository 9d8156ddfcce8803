import numpy as np
import pytest

from gridrank import autodiff


@pytest.fixture(autouse=True)
def finite_checks():
    """Run every unit test with per-op finiteness checks enabled."""
    autodiff.set_debug(True)
    yield
    autodiff.set_debug(False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", default=False,
                     help="skip the end-to-end acceptance experiments")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    marker = pytest.mark.skip(reason="--skip-slow given")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(marker)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end experiment")
