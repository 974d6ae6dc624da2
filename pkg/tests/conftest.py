import pytest

_STATUS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.fixture
def detail():
    """Acceptance tests append human-readable evidence here."""
    return []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, title = marker.args
    notes = "; ".join(item.funcargs.get("detail", []) if hasattr(item, "funcargs") else [])
    status = "PASS" if rep.passed else "FAIL"
    _STATUS[n] = f"AC{n:<2} {status}  {title}" + (f"  [{notes}]" if notes else "")


def pytest_terminal_summary(terminalreporter):
    if not _STATUS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_STATUS):
        terminalreporter.write_line(_STATUS[n])
