import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pralab.sensor import sensor_preset, synthesize_ring_scan

settings.register_profile("pralab", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pralab")


@pytest.fixture(scope="session")
def vlp16():
    return sensor_preset("vlp16")


@pytest.fixture(scope="session")
def hdl64():
    return sensor_preset("hdl64")


@pytest.fixture(scope="session")
def ring10(vlp16):
    """Every VLP-16 firing returns at 10 m."""
    return synthesize_ring_scan(vlp16, [10.0] * 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._criteria = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call":
        return
    n = mark.args[0]
    detail = dict(item.user_properties).get("detail", "")
    ok = call.excinfo is None
    prev = item.config._criteria.get(n)
    if prev is None or prev[0]:
        item.config._criteria[n] = (ok, detail if ok or detail else str(call.excinfo.value).splitlines()[0])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = config._criteria
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        ok, detail = crit[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
