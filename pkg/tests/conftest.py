import numpy as np
import pytest
from hypothesis import strategies as st

from conformal_arbitrage import MarginalValueCurve, StorageSpec


@pytest.fixture
def spec():
    """The reference unit: P=0.5, E=1, eta=0.9, C=10."""
    return StorageSpec(power_limit_per_step=0.5, capacity=1.0, efficiency=0.9, marginal_cost=10.0)


@pytest.fixture
def spec_c0():
    return StorageSpec(power_limit_per_step=0.5, capacity=1.0, efficiency=0.9, marginal_cost=0.0)


def random_curve(rng, capacity=1.0, max_segments=6, low=-20.0, high=120.0, lattice=None):
    """Random non-increasing step curve; ``lattice`` snaps breakpoints to k/lattice * E."""
    n = int(rng.integers(1, max_segments + 1))
    if lattice:
        pts = rng.choice(np.arange(1, lattice), size=min(n - 1, lattice - 1), replace=False)
        inner = np.sort(pts) * capacity / lattice
    else:
        inner = np.sort(rng.uniform(0.0, capacity, n - 1))
    bp = np.concatenate(([0.0], inner, [capacity]))
    bp = np.unique(bp)
    vals = np.sort(rng.uniform(low, high, len(bp) - 1))[::-1]
    return MarginalValueCurve(bp, vals)


def random_spec(rng, unit_eta=False, cost=True):
    return StorageSpec(
        power_limit_per_step=float(rng.uniform(0.05, 0.8)),
        capacity=1.0,
        efficiency=1.0 if unit_eta else float(rng.uniform(0.6, 1.0)),
        marginal_cost=float(rng.uniform(0.0, 15.0)) if cost else 0.0,
    )


@st.composite
def curves(draw, capacity=1.0, max_segments=6):
    n = draw(st.integers(1, max_segments))
    cuts = draw(
        st.lists(st.floats(0.01, 0.99, allow_nan=False), min_size=n - 1, max_size=n - 1, unique=True)
    )
    bp = np.unique(np.concatenate(([0.0], np.sort(cuts) * capacity, [capacity])))
    vals = draw(st.lists(st.floats(-50, 150, allow_nan=False), min_size=len(bp) - 1, max_size=len(bp) - 1))
    return MarginalValueCurve(bp, sorted(vals, reverse=True))


@st.composite
def specs(draw):
    return StorageSpec(
        power_limit_per_step=draw(st.floats(0.05, 1.0)),
        capacity=1.0,
        efficiency=draw(st.floats(0.5, 1.0)),
        marginal_cost=draw(st.floats(0.0, 20.0)),
    )


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
