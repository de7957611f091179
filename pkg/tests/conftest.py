import numpy as np
import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def verdict(request):
    """Record the PASS/FAIL line of an acceptance criterion."""
    number = request.node.get_closest_marker("criterion").args[0]

    def record(ok, detail):
        request.config.stash[_VERDICTS][number] = f"{'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call" and report.failed:
        lines = item.config.stash[_VERDICTS]
        lines.setdefault(marker.args[0], f"FAIL  error: {call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_VERDICTS]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(f"criterion {number:>2}: {lines[number]}")
