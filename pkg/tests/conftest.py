import pytest

from niid.core import RngSeed

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.addinivalue_line("markers", "slow: long Monte Carlo runs")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    n, title = marker
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": True, "seconds": 0.0})
    entry["passed"] &= report.passed
    entry["seconds"] += report.duration


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report._criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status}  {e['title']}  ({e['seconds']:.1f}s)")


@pytest.fixture
def rng():
    return RngSeed(20240611).generator()
