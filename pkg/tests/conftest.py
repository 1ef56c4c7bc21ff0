import json
import time
from pathlib import Path

import numpy as np
import pytest

from delaytrack import cli
from delaytrack.tracker import solve_problem

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# filled by the acceptance module, printed once at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def load_config(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def config_cases(name):
    """[(case name or None, document)] for a golden config."""
    return cli.expand_sweep(load_config(name))


def solve_doc(doc, oracle=False, samples=200):
    """Solve one document the way the CLI does; returns (solution, seconds, oracle summary)."""
    cfg = cli.RunConfig(document=Path("-"), out=Path("-"))
    problem = cli.parse_problem(doc)
    k, M, tol, max_iter, rd = cli._solver_settings(doc, cfg)
    t0 = time.perf_counter()
    sol = solve_problem(problem, k, M, round_delays=rd, tol=tol, max_iter=max_iter)
    info = None
    if oracle:
        _, _, info = cli.oracle_check(sol.problem, sol, samples)
    return sol, time.perf_counter() - t0, info


@pytest.fixture(scope="session")
def ex1a():
    return solve_doc(load_config("ex1a"))[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
