import numpy as np
import pytest

from forced_mcf.surface_mesh import make_sphere_mesh


@pytest.fixture(scope="session")
def sphere2():
    """Quadratic icosphere, frequency 4 (162 vertices, 642 nodes)."""
    return make_sphere_mesh(2, radius=1.0, degree=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report: one PASS/FAIL line per criterion ------------------------

def pytest_configure(config):
    config.acceptance_log = {}


@pytest.fixture
def acceptance(request):
    """``record(criterion, ok, detail)``; lines are printed in the summary."""
    log = request.config.acceptance_log

    def record(criterion, ok, detail=""):
        log.setdefault(criterion, []).append((bool(ok), detail))
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter, config):
    log = getattr(config, "acceptance_log", {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(log):
        parts = log[criterion]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {criterion:>2}: {status}")
        for ok, detail in parts:
            terminalreporter.write_line(f"    {'ok  ' if ok else 'FAIL'} {detail}")
