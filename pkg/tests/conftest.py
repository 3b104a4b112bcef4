import numpy as np
import pytest

from symmcmc.net import Architecture


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[[1, 3, 1], [2, 4, 4, 1], [3, 2, 5, 2]], ids=lambda w: "-".join(map(str, w)))
def arch(request):
    return Architecture(request.param)


def central_diff(f, q, h=1e-5):
    g = np.empty_like(q)
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        g[i] = (f(q + e) - f(q - e)) / (2 * h)
    return g


_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[report.nodeid] = report


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_criteria):
        rep = _criteria[nodeid]
        name = nodeid.rsplit("::", 1)[1].removeprefix("test_criterion_")
        status = "PASS" if rep.passed else "FAIL"
        props = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in rep.user_properties)
        terminalreporter.write_line(f"criterion {name}: {status}  {props}")
