import numpy as np
import pytest

from lagflow.constants import SamplingPlan, constants_report
from lagflow.problem import builtin, golden

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def illus():
    return builtin("illustrative_2d")


@pytest.fixture(scope="session")
def illus_golden():
    g = golden("illustrative_2d")
    return np.array(g["x_star"]), np.array(g["lambda_star"]), g


@pytest.fixture(scope="session")
def quad():
    """``Q = I, c = 0, A = [1 0], b = 1``: minimizer (1, 0), multiplier -1."""
    return builtin("quadratic_affine")


@pytest.fixture(scope="session")
def illus_report(illus):
    return constants_report(illus, SamplingPlan())


BUILTIN_CASES = {
    "illustrative_2d": {},
    "quadratic_affine": {},
    "quadratic_affine_diag": {"Q": [[1.0, 0.0], [0.0, 4.0]]},
    "graph_quadratic": {},
}


def make_builtin(case):
    name = "quadratic_affine" if case == "quadratic_affine_diag" else case
    return builtin(name, **BUILTIN_CASES[case])


@pytest.fixture(params=sorted(BUILTIN_CASES), scope="session")
def any_builtin(request):
    return make_builtin(request.param)


@pytest.fixture(scope="session")
def builtin_reports(illus_report):
    """Default-plan reports for every builtin case, computed once."""
    out = {"illustrative_2d": illus_report}
    for case in BUILTIN_CASES:
        if case not in out:
            out[case] = constants_report(make_builtin(case), SamplingPlan())
    return out
