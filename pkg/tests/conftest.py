"""Collects the acceptance criterion lines and prints them after the run."""

_LINES = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        status = "PASS" if report.passed else "FAIL"
        _LINES[props["criterion"]] = f"criterion {props['criterion']:>2}: {status}  {props.get('detail', '')}"


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES):
        terminalreporter.write_line(_LINES[key])
