import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if report.skipped:
        status = "SKIP"
        if not detail and isinstance(report.longrepr, tuple):
            detail = report.longrepr[-1].removeprefix("Skipped: ")
    else:
        status = "PASS" if report.passed else "FAIL"
    previous = item.config._criteria.get(number)
    if previous is None or previous[0] == "PASS":
        item.config._criteria[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        status, title, detail = criteria[number]
        line = f"[{status}] {number:>2}. {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
