import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from interpreg import simulate as sim  # noqa: E402
from interpreg.data import from_arrays  # noqa: E402

SAMPLE = Path(__file__).resolve().parents[1] / "src" / "interpreg" / "sample_data"

_ACCEPTANCE_LINES = []
SWEEP_SECONDS = {}


def record(criterion, ok, detail):
    _ACCEPTANCE_LINES.append(f"[criterion {criterion:>2}] {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def sample_paths():
    return SAMPLE / "linear20.csv", SAMPLE / "linear20.spec.json"


def product_data(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    X -= X.mean(axis=0)
    return from_arrays(X, X[:, 0] * X[:, 1])


# Full-size default sweeps are shared by the acceptance module and the
# simulate tests so each runs once per session.

@pytest.fixture(scope="session")
def sweep_interaction():
    t0 = time.perf_counter()
    r = sim.ablate_interaction()
    SWEEP_SECONDS["interaction"] = time.perf_counter() - t0
    return r


@pytest.fixture(scope="session")
def sweep_size():
    return sim.ablate_size()


@pytest.fixture(scope="session")
def sweep_missing():
    return sim.ablate_missing()


@pytest.fixture(scope="session")
def sweep_binning():
    return sim.ablate_binning()


@pytest.fixture(scope="session")
def sweep_nuisance():
    return sim.ablate_nuisance()
