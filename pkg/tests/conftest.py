import numpy as np
import pytest

from colloc.core import MonotonicPolynomial

# Collocation polynomials calibrated to TSLA options on 2018-06-15.
TABLE1 = {
    "2018-07-20": [356.64, 48.632, 0.842, -0.565, 0.0917, 0.412],
    "2019-01-18": [362.86, 117.77, -23.49, 3.970, 5.586, 0.729],
    "2020-01-17": [364.01, 216.74, -72.76, -29.51, 21.83, 7.014],
}

# A smooth increasing quintic used wherever a well-behaved synthetic map is needed.
SMOOTH = [100.0, 30.0, 3.0, 1.5, 0.2, 0.08]


@pytest.fixture
def july():
    return MonotonicPolynomial(TABLE1["2018-07-20"])


@pytest.fixture
def jan19():
    return MonotonicPolynomial(TABLE1["2019-01-18"])


@pytest.fixture
def jan20():
    return MonotonicPolynomial(TABLE1["2020-01-17"])


@pytest.fixture
def smooth():
    return MonotonicPolynomial(SMOOTH)


@pytest.fixture
def rng():
    return np.random.default_rng(20180615)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_ac" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    key = name.split("_")[1].upper()  # "test_ac4_..." -> "AC4"
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(key, (name, True))
        _ACCEPTANCE[key] = (prev[0], prev[1] and report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[2:])):
        name, ok = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<5} {'PASS' if ok else 'FAIL'}  {name}")
