import pytest

# criterion number -> (title, outcome, seconds)
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (title, "PASS", 0.0))
    status = prev[1] if rep.passed else "FAIL"
    _CRITERIA[n] = (title, status, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}  ({secs:.1f} s)")
