import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conformal_arbitrage import DataError, DispatchDecision, FeasibilityError, PriceSeries, StorageSpec
from conformal_arbitrage.domain import IDLE, apply_decision, clamp_decision, feasible_bounds, step_profit

from conftest import specs


@pytest.mark.parametrize(
    "p, b, expected",
    [(0.0, 0.0, 0.5), (0.0, 0.5, 0.95), (0.45, 0.0, 0.0)],
)
def test_apply_decision_examples(spec, p, b, expected):
    assert apply_decision(0.5, DispatchDecision(p, b), spec) == pytest.approx(expected, abs=1e-12)


def test_apply_decision_names_violated_bound(spec):
    with pytest.raises(FeasibilityError, match="below lower bound"):
        apply_decision(0.1, DispatchDecision(0.5, 0.0), spec)
    with pytest.raises(FeasibilityError, match="above upper bound"):
        apply_decision(0.9, DispatchDecision(0.0, 0.5), spec)
    with pytest.raises(FeasibilityError, match="power limit"):
        apply_decision(0.5, DispatchDecision(0.0, 0.6), spec)
    with pytest.raises(FeasibilityError, match="negative price"):
        apply_decision(0.5, DispatchDecision(0.1, 0.0), spec, price=-5.0)


@pytest.mark.parametrize(
    "price, p, b, expected",
    [(60.0, 0.45, 0.0, 22.5), (30.0, 0.0, 0.5, -15.0), (123.4, 0.0, 0.0, 0.0), (-80.0, 0.0, 0.0, 0.0)],
)
def test_step_profit_examples(spec, price, p, b, expected):
    assert step_profit(price, DispatchDecision(p, b), spec) == pytest.approx(expected)


@pytest.mark.parametrize(
    "soc, price, expected",
    [(0.5, 50.0, (0.45, 0.5)), (0.5, -5.0, (0.0, 0.5)), (0.0, 50.0, (0.0, 0.5)), (1.0, 50.0, (0.5, 0.0))],
)
def test_feasible_bounds_examples(spec, soc, price, expected):
    assert feasible_bounds(soc, price, spec) == pytest.approx(expected)


def test_feasible_bounds_against_grid_enumeration(spec):
    # largest p, b on a fine grid that keep the SoC inside [0, E]
    grid = np.linspace(0.0, spec.power_limit_per_step, 50001)
    for soc in (0.0, 0.2, 0.5, 0.9, 1.0):
        ok_p = grid[soc - grid / spec.efficiency >= -1e-12]
        ok_b = grid[soc + grid * spec.efficiency <= spec.capacity + 1e-12]
        max_p, max_b = feasible_bounds(soc, 50.0, spec)
        assert max_p == pytest.approx(ok_p.max(), abs=1e-5)
        assert max_b == pytest.approx(ok_b.max(), abs=1e-5)


def test_decision_invariants():
    with pytest.raises(FeasibilityError):
        DispatchDecision(0.1, 0.1)
    with pytest.raises(FeasibilityError):
        DispatchDecision(-0.1, 0.0)
    assert IDLE.is_idle
    assert DispatchDecision(0.2, 0.0).net == 0.2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(power_limit_per_step=0.0, capacity=1.0),
        dict(power_limit_per_step=0.5, capacity=0.0),
        dict(power_limit_per_step=0.5, capacity=1.0, efficiency=0.0),
        dict(power_limit_per_step=0.5, capacity=1.0, efficiency=1.1),
        dict(power_limit_per_step=0.5, capacity=1.0, marginal_cost=-1.0),
        dict(power_limit_per_step=0.5, capacity=1.0, interval_hours=0.0),
    ],
)
def test_storage_spec_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        StorageSpec(**kwargs)


def test_from_rating_folds_interval():
    s = StorageSpec.from_rating(0.5, 1.0, 5 / 60)
    assert s.power_limit_per_step == pytest.approx(0.5 * 5 / 60)


def test_price_series_validation():
    ts = np.array(["2023-01-01T00:00", "2023-01-01T00:05"], dtype="datetime64[s]")
    with pytest.raises(DataError):
        PriceSeries(ts[::-1], np.array([1.0, 2.0]))
    with pytest.raises(DataError):
        PriceSeries(ts, np.array([1.0, math.inf]))
    with pytest.raises(DataError):
        PriceSeries(ts, np.array([1.0]))
    s = PriceSeries.from_prices([1.0, 2.0, 3.0])
    assert len(s[1:]) == 2 and s[2] == 3.0


def test_round_trip_returns_eta_squared(spec):
    bought = 0.3
    soc = apply_decision(0.0, DispatchDecision(0.0, bought), spec)
    sold = soc * spec.efficiency
    assert apply_decision(soc, DispatchDecision(sold, 0.0), spec) == pytest.approx(0.0, abs=1e-12)
    assert sold == pytest.approx(spec.efficiency**2 * bought)


@given(specs(), st.floats(0, 1), st.lists(st.tuples(st.floats(-1, 1), st.floats(-100, 100)), max_size=30))
def test_clamped_trajectories_stay_in_bounds(s, frac, steps):
    soc = frac * s.capacity
    for x, price in steps:
        d = clamp_decision(DispatchDecision(max(x, 0.0), max(-x, 0.0)), soc, price, s)
        soc = apply_decision(soc, d, s, price)
        assert 0.0 <= soc <= s.capacity


@given(
    st.floats(-200, 200),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 20),
)
def test_step_profit_linear_in_decision(price, p1, p2, b1, b2, cost):
    s = StorageSpec(1.0, 2.0, 0.9, cost)
    # linear on each side of the origin (the cost only touches discharge)
    lhs = step_profit(price, DispatchDecision(p1 + p2, 0.0), s)
    rhs = step_profit(price, DispatchDecision(p1, 0.0), s) + step_profit(price, DispatchDecision(p2, 0.0), s)
    assert lhs == pytest.approx(rhs, abs=1e-9)
    lhs = step_profit(price, DispatchDecision(0.0, b1 + b2), s)
    rhs = step_profit(price, DispatchDecision(0.0, b1), s) + step_profit(price, DispatchDecision(0.0, b2), s)
    assert lhs == pytest.approx(rhs, abs=1e-9)
