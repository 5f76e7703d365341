import pytest

_verdicts: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    # a setup failure (e.g. a shared fixture) counts against the criterion too
    if report.when == "setup" and report.passed:
        return
    _verdicts[number] = {"title": title, "passed": report.passed, "seconds": report.duration}


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        v = _verdicts[number]
        status = "PASS" if v["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {v['title']}  ({v['seconds']:.1f} s)")
