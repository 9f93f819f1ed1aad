"""Closed-form threshold dispatch: risk-neutral and conformal prediction-set policies.

Both policies share one five-case threshold rule. The conformal variant values
charging against the lower edge of the prediction set ``q - w`` and
discharging against the upper edge ``q + w``; ``w = 0`` is the risk-neutral
rule. Boundary equalities resolve to the earlier case in the list
(full charge, partial charge, idle, partial discharge, full discharge).
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

from .domain import DispatchDecision
from .valuefn import inverse_marginal, marginal_at

GAMMA_MIN = 1e-6
GAMMA_MAX_SLACK = 1e-6

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class PredictionSetParams:
    """Conformal control variable ``gamma`` and sensitivity ``sigma`` ($/MWh)."""

    gamma: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def normal_quantile(prob):
    return _STD_NORMAL.inv_cdf(prob)


def halfwidth(params, gamma_min=GAMMA_MIN, slack=GAMMA_MAX_SLACK):
    """Half-width ``sigma * z_{1 - gamma/2}`` of the prediction set, floored at 0.

    ``gamma`` is clamped into ``[gamma_min, 2 - slack]`` only for the
    quantile evaluation, so any real ``gamma`` is accepted.
    """
    g = min(max(params.gamma, gamma_min), 2.0 - slack)
    z = normal_quantile(1.0 - g / 2.0)
    return params.sigma * z if z > 0 else 0.0


def threshold_dispatch(price, soc_prev, curve, spec, widen=0.0):
    """Five-case threshold rule against the band ``[q - widen, q + widen]``."""
    eta = spec.efficiency
    P = spec.power_limit_per_step
    E = spec.capacity
    C = spec.marginal_cost
    p = b = 0.0
    q_here = marginal_at(curve, soc_prev)
    if price <= (marginal_at(curve, soc_prev + P * eta) - widen) * eta:
        b = P
    elif price <= (q_here - widen) * eta:
        b = (inverse_marginal(curve, price / eta + widen) - soc_prev) / eta
    elif price <= max((q_here + widen) / eta + C, 0.0):
        pass
    elif price <= max((marginal_at(curve, soc_prev - P / eta) + widen) / eta + C, 0.0):
        p = (soc_prev - inverse_marginal(curve, (price - C) * eta - widen)) * eta
    else:
        p = P
    if price < 0:
        p = 0.0
    # thresholds are compared in price space and inverted in value space;
    # round-off between the two must not push a partial case past P
    p = min(max(p, 0.0), P, soc_prev * eta)
    b = min(max(b, 0.0), P, (E - soc_prev) / eta)
    return DispatchDecision(p, b)


def risk_neutral_policy(price, soc_prev, curve, spec):
    """Exact argmax of the one-step arbitrage objective for a forecast curve."""
    return threshold_dispatch(price, soc_prev, curve, spec)


def conformal_policy(price, soc_prev, curve, params, spec):
    """Dispatch against the conformal prediction set around ``curve``."""
    return threshold_dispatch(price, soc_prev, curve, spec, halfwidth(params))


def idle_band(soc_prev, curve, params, spec):
    """Price interval ``(low, high]`` in which the conformal policy idles."""
    w = halfwidth(params)
    q = marginal_at(curve, soc_prev)
    low = (q - w) * spec.efficiency
    high = max((q + w) / spec.efficiency + spec.marginal_cost, 0.0)
    return low, high


def one_step_objective(price, soc_prev, decision, curve, spec, widen=0.0):
    """Objective the threshold rule maximises, relative to staying idle.

    Charging is valued on ``q - widen`` and discharging on ``q + widen``.
    """
    eta = spec.efficiency
    p, b = decision.discharge, decision.charge
    soc = soc_prev - p / eta + b * eta
    dq = curve.value_at(soc) - curve.value_at(soc_prev)
    if b > 0:
        dq -= widen * (soc - soc_prev)
    elif p > 0:
        dq -= widen * (soc_prev - soc)
    return price * (p - b) - spec.marginal_cost * p + dq
