import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_se(estimate, target, se, k=4.0):
    return abs(estimate - target) <= k * se


# one PASS/FAIL line per acceptance criterion at the end of the run
_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed:
        prev = _criteria.get(name, "PASS")
        _criteria[name] = "FAIL" if report.failed or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        num = int(name.split("_")[2])
        label = name.split("_", 3)[3].replace("_", " ")
        terminalreporter.write_line(f"criterion {num:2d}: {_criteria[name]}  ({label})")
