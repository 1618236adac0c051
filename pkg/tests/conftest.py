import numpy as np
import pytest

from cbprocess import (AxisStable, BranchingMechanism, FiniteAtoms, Row, ZeroMeasure,
                       stable_mechanism)


def random_atoms_mechanism(rng: np.random.Generator, m: int | None = None,
                           max_atoms: int = 5) -> BranchingMechanism:
    """A valid finite-activity mechanism with m <= 3 and at most ``max_atoms`` atoms per row."""
    m = m or int(rng.integers(1, 4))
    rows = []
    for i in range(m):
        alpha = rng.uniform(0.0, 0.5, m)
        alpha[i] = rng.uniform(-2.0, 0.5)
        atoms = []
        for _ in range(int(rng.integers(0, max_atoms + 1))):
            z = rng.uniform(0.0, 1.5, m) * (rng.random(m) < 0.7)
            z[int(rng.integers(m))] += rng.uniform(0.05, 1.0)
            atoms.append((tuple(z), float(rng.uniform(0.1, 2.0))))
        levy = FiniteAtoms(tuple(atoms)) if atoms else ZeroMeasure()
        rows.append(Row(tuple(alpha), float(rng.uniform(0.0, 1.0)), levy))
    return BranchingMechanism(tuple(rows))


@pytest.fixture
def feller():
    return BranchingMechanism((Row((0.0,), 2.0),))


@pytest.fixture
def half_stable():
    return stable_mechanism(2.0, 0.5)


@pytest.fixture
def single_atom():
    return BranchingMechanism((Row((0.0,), 0.0, FiniteAtoms((((1.0,), 1.0),))),))


@pytest.fixture
def two_dim_stable():
    return BranchingMechanism((
        Row((-1.0, 0.5), 0.3, AxisStable(0, 1.5, 0.7)),
        Row((0.2, -2.0), 0.0, AxisStable(0, 0.6, 0.4)),
    ))


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
