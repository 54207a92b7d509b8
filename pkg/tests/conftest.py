import numpy as np
import pytest

from csbo.problems import build_hyperclean, build_quadratic, build_traffic


@pytest.fixture(scope="session")
def quadratic():
    return build_quadratic(3, 2, 0)


@pytest.fixture(scope="session")
def traffic():
    return build_traffic(0)


@pytest.fixture(scope="session")
def hyperclean():
    return build_hyperclean(n_train=60, n_val=20, n_features=4, n_classes=3, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    n, title = marker.args
    measured = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
    prev = _CRITERIA.get(n)
    status = "PASS" if report.passed else "FAIL"
    if prev is not None and prev[0] == "FAIL":
        status = "FAIL"
    if prev is not None and prev[2] and measured:
        measured = prev[2] + "; " + measured
    _CRITERIA[n] = (status, title, measured or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, measured = _CRITERIA[n]
        line = f"criterion {n:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
