import numpy as np
import pytest

_criteria = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, text = marker.args
        _criteria.append((number, text, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    # one line per criterion; a criterion split over several tests needs all of them
    merged = {}
    for number, text, outcome in _criteria:
        prev = merged.get(number, (text, True))
        merged[number] = (prev[0], prev[1] and outcome == "passed")
    terminalreporter.section("acceptance criteria")
    for number in sorted(merged):
        text, ok = merged[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
