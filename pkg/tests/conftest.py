"""Prints one pass/fail line per acceptance criterion after the run."""

_DESCRIPTIONS = {}
_RESULTS = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.module.__name__ == "test_acceptance":
            doc = (item.function.__doc__ or "").strip().splitlines()
            _DESCRIPTIONS[item.nodeid] = doc[0] if doc else item.name


def pytest_runtest_logreport(report):
    if report.nodeid not in _DESCRIPTIONS:
        return
    if report.when == "call":
        _RESULTS[report.nodeid] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _RESULTS[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_RESULTS):
        status = "PASS" if _RESULTS[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {_DESCRIPTIONS[nodeid]}")
