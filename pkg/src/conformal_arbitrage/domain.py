"""Storage unit parameters, dispatch decisions and per-step dynamics.

All energies are per-interval quantities in MWh: a decision ``(p, b)``
discharges ``p`` MWh to the grid and buys ``b`` MWh from it during one
interval. State of charge is a plain float in ``[0, capacity]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, FeasibilityError

# Slack for float round-off when re-validating decisions produced by policies.
SOC_TOL = 1e-9


@dataclass(frozen=True)
class StorageSpec:
    """Physical parameters of a single storage unit.

    Parameters
    ----------
    power_limit_per_step : float
        Maximum charge or discharge energy in one interval (MWh).
    capacity : float
        Energy capacity (MWh).
    efficiency : float
        One-way efficiency in (0, 1]; charging stores ``b * efficiency``,
        discharging ``p`` drains ``p / efficiency``.
    marginal_cost : float
        Discharge cost in $/MWh (degradation proxy).
    interval_hours : float
        Interval length, kept for reporting and unit conversion.
    """

    power_limit_per_step: float
    capacity: float
    efficiency: float = 0.9
    marginal_cost: float = 0.0
    interval_hours: float = 1.0

    def __post_init__(self):
        if not self.power_limit_per_step > 0:
            raise ValueError("power_limit_per_step must be > 0")
        if not self.capacity > 0:
            raise ValueError("capacity must be > 0")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if not self.marginal_cost >= 0:
            raise ValueError("marginal_cost must be >= 0")
        if not self.interval_hours > 0:
            raise ValueError("interval_hours must be > 0")

    @classmethod
    def from_rating(cls, power_mw, capacity_mwh, interval_hours, efficiency=0.9, marginal_cost=0.0):
        """Build a spec from a MW rating, folding the interval length into P."""
        return cls(
            power_limit_per_step=power_mw * interval_hours,
            capacity=capacity_mwh,
            efficiency=efficiency,
            marginal_cost=marginal_cost,
            interval_hours=interval_hours,
        )


@dataclass(frozen=True)
class DispatchDecision:
    discharge: float = 0.0
    charge: float = 0.0

    def __post_init__(self):
        if self.discharge < 0 or self.charge < 0:
            raise FeasibilityError(f"negative dispatch {self}")
        if self.discharge > 0 and self.charge > 0:
            raise FeasibilityError("simultaneous charge and discharge")

    @property
    def net(self):
        """Energy sold minus energy bought."""
        return self.discharge - self.charge

    @property
    def is_idle(self):
        return self.discharge == 0 and self.charge == 0


IDLE = DispatchDecision()


@dataclass(frozen=True)
class PriceSeries:
    """Timestamped real-time prices ($/MWh)."""

    timestamps: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        px = np.asarray(self.prices, dtype=float)
        if ts.ndim != 1 or px.ndim != 1 or len(ts) != len(px):
            raise DataError("timestamps and prices must be 1-D and of equal length")
        if len(px) and not np.all(np.isfinite(px)):
            raise DataError("prices must be finite")
        if len(ts) > 1 and not np.all(ts[1:] > ts[:-1]):
            bad = int(np.argmin(ts[1:] > ts[:-1])) + 1
            raise DataError(f"timestamps not strictly increasing at index {bad}")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices", px)

    def __len__(self):
        return len(self.prices)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return PriceSeries(self.timestamps[item], self.prices[item])
        return self.prices[item]

    @classmethod
    def from_prices(cls, prices, start="2023-01-01T00:00:00", interval_minutes=5):
        prices = np.asarray(prices, dtype=float)
        step = np.timedelta64(int(round(interval_minutes * 60)), "s")
        ts = np.datetime64(start, "s") + step * np.arange(len(prices))
        return cls(ts, prices)


def feasible_bounds(soc_prev, price, spec):
    """Largest admissible ``(discharge, charge)`` from ``soc_prev`` at ``price``.

    Discharge is forbidden at negative prices.
    """
    eta = spec.efficiency
    max_discharge = min(spec.power_limit_per_step, soc_prev * eta)
    if price < 0:
        max_discharge = 0.0
    max_charge = min(spec.power_limit_per_step, (spec.capacity - soc_prev) / eta)
    return max(max_discharge, 0.0), max(max_charge, 0.0)


def apply_decision(soc_prev, decision, spec, price=None):
    """Return the next state of charge ``e - p/eta + b*eta``.

    Raises FeasibilityError when the decision breaks the power limit, the
    capacity window or (if ``price`` is given) the negative-price rule.
    """
    P, E, eta = spec.power_limit_per_step, spec.capacity, spec.efficiency
    p, b = decision.discharge, decision.charge
    if p > P * (1 + SOC_TOL) + SOC_TOL:
        raise FeasibilityError(f"discharge {p} exceeds power limit {P}")
    if b > P * (1 + SOC_TOL) + SOC_TOL:
        raise FeasibilityError(f"charge {b} exceeds power limit {P}")
    if price is not None and price < 0 and p > 0:
        raise FeasibilityError(f"discharge {p} at negative price {price}")
    soc = soc_prev - p / eta + b * eta
    if soc < -SOC_TOL * max(E, 1.0):
        raise FeasibilityError(f"state of charge {soc} below lower bound 0")
    if soc > E + SOC_TOL * max(E, 1.0):
        raise FeasibilityError(f"state of charge {soc} above upper bound {E}")
    return min(max(soc, 0.0), E)


def step_profit(price, decision, spec):
    """Cash earned in one interval: ``price * (p - b) - C * p``."""
    return price * (decision.discharge - decision.charge) - spec.marginal_cost * decision.discharge


def clamp_decision(decision, soc_prev, price, spec):
    """Clip a proposed decision into the feasible box (used by grid solvers)."""
    max_p, max_b = feasible_bounds(soc_prev, price, spec)
    p = min(max(decision.discharge, 0.0), max_p)
    b = min(max(decision.charge, 0.0), max_b)
    if p > 0 and b > 0:
        if p >= b:
            b = 0.0
        else:
            p = 0.0
    return DispatchDecision(p, b)


def is_close_decision(a, b, tol):
    return math.isclose(a.discharge, b.discharge, abs_tol=tol) and math.isclose(
        a.charge, b.charge, abs_tol=tol
    )
