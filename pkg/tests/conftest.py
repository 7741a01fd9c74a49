"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_results: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and report.passed:
        return
    n, title = marker.args
    prev_title, failures = _results.setdefault(n, (title, []))
    if report.failed:
        failures.append(str(report.longrepr).strip().splitlines()[-1][:160])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        title, failures = _results[n]
        status = "FAIL" if failures else "PASS"
        line = f"criterion {n}: {status}  {title}"
        if failures:
            line += f"  ({failures[0]})"
        terminalreporter.write_line(line)
