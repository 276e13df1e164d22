import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    num, name = int(m.group(1)), m.group(2).replace("_", " ")
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(num, (name, "PASS"))[1]
        status = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        if report.outcome == "skipped":
            status = "SKIP"
        _outcomes[num] = (name, status)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_outcomes):
        name, status = _outcomes[num]
        terminalreporter.write_line(f"criterion {num:2d} {status}  {name}")
