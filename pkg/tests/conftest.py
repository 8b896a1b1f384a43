import numpy as np
import pytest

from semrd import experiments, solver

_solve = solver.solve
SOLVES = {"count": 0, "worst_residual": 0.0, "worst_ascent": -np.inf}


def _checked_solve(src, pixel=None, cfg=None, state=None):
    """Every converged solve in the suite must be a fixed point and descend monotonically."""
    res = _solve(src, pixel, cfg, state)
    h = np.asarray(res.history)
    ascent = float(np.max(np.diff(h))) if h.size > 1 else -np.inf
    SOLVES["count"] += 1
    SOLVES["worst_ascent"] = max(SOLVES["worst_ascent"], ascent)
    assert ascent <= 1e-10, f"Lagrangian rose by {ascent:.3e}"
    if res.converged:
        SOLVES["worst_residual"] = max(SOLVES["worst_residual"], res.residual)
        assert res.residual < 1e-6, f"converged solve has residual {res.residual:.3e}"
    return res


@pytest.fixture(autouse=True)
def _guard_solves(monkeypatch):
    monkeypatch.setattr(solver, "solve", _checked_solve)
    monkeypatch.setattr(experiments, "solve", _checked_solve)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if SOLVES["count"]:
        terminalreporter.write_line(f"solve guard: {SOLVES['count']} solves, worst converged residual "
                                    f"{SOLVES['worst_residual']:.1e}, largest per-step change {SOLVES['worst_ascent']:+.1e}")
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
