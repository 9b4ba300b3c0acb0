import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from logcvx.geometry import TorusGrid

settings.register_profile(
    "logcvx", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("logcvx")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def g1():
    return TorusGrid(1, 64)


@pytest.fixture
def g2():
    return TorusGrid(2, 32)


def mode(grid, j, m=1, fn=np.sin):
    X = np.zeros((m,) + grid.shape)
    X[0] = fn(j * grid.points[0])
    return X


ACCEPTANCE_LINES = []


@pytest.fixture
def record_acceptance():
    """Log one PASS/FAIL line per acceptance criterion; returns the verdict."""

    def record(number, title, checks):
        ok = all(bool(v) for v in checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:>2} {title}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += f" (failed: {', '.join(failed)})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
