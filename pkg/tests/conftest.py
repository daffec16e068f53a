"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "passed": True, "seen": False, "detail": []})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["passed"] &= report.passed
    if report.when == "call":
        entry["detail"].extend(str(v) for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        e = _RESULTS[number]
        status = "PASS" if e["seen"] and e["passed"] else "FAIL"
        detail = f"  ({'; '.join(e['detail'])})" if e["detail"] else ""
        terminalreporter.write_line(f"[{status}] criterion {number}: {e['title']}{detail}")
