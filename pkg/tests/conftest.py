import numpy as np
import pytest

from bchd_orbit.models import builtin_cstr2, builtin_cstr3, reference_control
from bchd_orbit.solve import steady_state


@pytest.fixture(scope="session")
def cstr2():
    return builtin_cstr2()


@pytest.fixture(scope="session")
def cstr3():
    return builtin_cstr3()


@pytest.fixture(scope="session")
def cstr2_fields(cstr2):
    sched = cstr2.symmetric_bang_bang(1.0)
    return [cstr2.frozen_field(u) for u in sched.controls]


@pytest.fixture(scope="session")
def cstr3_fields(cstr3):
    sched = cstr3.symmetric_bang_bang(1.0)
    return [cstr3.frozen_field(u) for u in sched.controls]


@pytest.fixture(scope="session")
def cstr3_steady(cstr3):
    rep = steady_state(cstr3, reference_control(cstr3), [0.4, 0.6, 355.0])
    assert rep.converged
    return rep.x_star


def central_jacobian(func, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        cols.append((func(x + e) - func(x - e)) / (2 * e[j]))
    return np.stack(cols, axis=1)


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion (shown in the terminal summary)."""

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
