import time

_results = {}
_times = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion_"):
        _results[name] = report.outcome
        _times[name] = report.duration


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_results):
        label = name.replace("test_", "")
        outcome = _results[name].upper()
        terminalreporter.write_line(
            f"{label}: {outcome}  ({_times[name]:.1f}s)"
        )
