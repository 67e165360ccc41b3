import numpy as np
import pytest

from lhspline.binning import build_histogram
from lhspline.evt import egpd_simulate

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        measured = "; ".join(v for k, v in report.user_properties if k == "measured")
        text = mark.args[1] + (f"  [{measured}]" if measured else "")
        _CRITERIA.append((mark.args[0], status, text))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, text in sorted(_CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def egpd_sample():
    return egpd_simulate(18250, 0.8, 8.5, 0.2, np.random.default_rng([7, 0]))


@pytest.fixture(scope="session")
def egpd_hist(egpd_sample):
    return build_histogram(egpd_sample)
