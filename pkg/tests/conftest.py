"""Shared pytest hooks: the acceptance suite prints one summary line per criterion."""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)_")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    detail = dict(report.user_properties).get("detail", "")
    _RESULTS[int(m.group(1))] = ("PASS" if report.passed else "FAIL", detail)


_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}".rstrip())
