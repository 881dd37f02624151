import numpy as np
import pytest

from wrtdse.eigen import imaginary_time_relax
from wrtdse.fields import SoftCorePotential
from wrtdse.grid import make_grid


@pytest.fixture(autouse=True)
def _isolated_output(tmp_path, monkeypatch):
    monkeypatch.setenv("WRTDSE_OUTPUT", str(tmp_path / "runs"))


@pytest.fixture(scope="session")
def z3_small():
    """Z=3 soft-core ion on a small grid with its relaxed ground state."""
    grid = make_grid(64, 64, 0.3)
    pot = SoftCorePotential(6.48, 1.0, 3)
    res = imaginary_time_relax(pot, grid, n_states=1)
    return grid, pot, res


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "::test_criterion_" not in rep.nodeid or (outcome != "error" and rep.when != "call"):
                continue
            name = rep.nodeid.split("::test_criterion_")[1]
            detail = dict(rep.user_properties).get("verdict", "no verdict recorded")
            lines.append((name, f"criterion {int(name[:2]):2d}: {'PASS' if outcome == 'passed' else 'FAIL'}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
