import pytest

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _ACCEPTANCE.append((marker.args[0], "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status} {name}" + (f" ({detail})" if detail else ""))
