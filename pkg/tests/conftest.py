import numpy as np
import pytest

_CRITERIA: dict[int, dict] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and call.excinfo is not None:
        detail = f"{detail} | {call.excinfo.typename}: {call.excinfo.value}".strip(" |")
    _CRITERIA[number] = {"title": title, "passed": report.passed, "detail": detail}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        c = _CRITERIA[number]
        status = "PASS" if c["passed"] else "FAIL"
        line = f"criterion {number} {status}: {c['title']}"
        if c["detail"]:
            line += f" ({c['detail'].splitlines()[0][:200]})"
        terminalreporter.write_line(line)
