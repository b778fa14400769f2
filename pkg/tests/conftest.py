import os

import pytest

# keep Monte-Carlo runs independent of the host's core count
os.environ.setdefault("ALPHASCALE_THREADS", "2")

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    rec = _criteria.setdefault(mark.args[0], {"passed": 0, "failed": 0, "skipped": 0})
    if rep.failed:
        rec["failed"] += 1
    elif rep.skipped and rep.when in ("setup", "call"):
        rec["skipped"] += 1
    elif rep.when == "call" and rep.passed:
        rec["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        rec = _criteria[n]
        status = "FAIL" if rec["failed"] or not rec["passed"] else "PASS"
        extra = f" ({rec['skipped']} conditional check(s) skipped)" if rec["skipped"] else ""
        terminalreporter.write_line(f"CRITERION {n}: {status}{extra}")
