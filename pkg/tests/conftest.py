from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=100
)
settings.load_profile("default")

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion this test checks")
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def detail(request):
    """Call with a short measurement summary; it is echoed in the acceptance report."""

    def note(text: str) -> None:
        request.node.user_properties.append(("detail", text))
        print(text)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    notes = "; ".join(v for k, v in item.user_properties if k == "detail")
    status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
    line = f"criterion {number:>2} {title}: {status}"
    if notes:
        line += f" ({notes})"
    item.config.stash[ACCEPTANCE].append((number, item.name, line))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(lines, key=lambda entry: (entry[0], entry[1])):
        terminalreporter.write_line(line)
