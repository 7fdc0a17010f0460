import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cliff_lhmp.ingestion import State

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.skipped and hasattr(report, "wasxfail"):
            status = "FAIL (expected, see decisions ledger)"
        elif report.skipped:
            status = "SKIP"
        elif report.passed:
            status = "PASS"
        else:
            status = "FAIL"
        _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {title}: {status}")


def straight_history(x0=0.0, y0=0.0, heading=0.0, speed=1.0, n=8, dt=0.4):
    """``n`` states of a constant-velocity walk ending one period before ``(x0, y0)``."""
    c, s = np.cos(heading), np.sin(heading)
    return [
        State(x0 - speed * dt * (n - i) * c, y0 - speed * dt * (n - i) * s, speed, float(heading % (2 * np.pi)),
              -dt * (n - i))
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
