import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def line_grid():
    from extremal_design.domain import SpatialGrid
    return SpatialGrid.regular_1d(-6.0, 6.0, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (number, passed, detail)."""
    store = request.config.stash[_CRITERIA]
    name = request.node.name
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        store[marker.args[0]] = (False, f"{name}: did not complete")

    def record(number: int, passed: bool, detail: str):
        store[number] = (passed, f"{name}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        passed, detail = store[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
