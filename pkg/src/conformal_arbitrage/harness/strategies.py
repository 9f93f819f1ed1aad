"""Dispatch strategies as estimators with a common ``decide``/``observe`` protocol.

``fit(calibration_prices, spec)`` prepares a strategy for one run.
``decide(ctx)`` returns the decision for the current :class:`StepContext`.
``observe(...)`` receives the corrected curve one step later; only the
conformal strategies use it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ..baselines import (
    ChanceConfig,
    CVaRConfig,
    RobustConfig,
    SwitchingConfig,
    chance_constrained_policy,
    cvar_policy,
    robust_policy,
    scenario_curves,
    switching_cost_policy,
)
from ..conformal import ConformalController
from ..dispatch import conformal_policy, risk_neutral_policy


@dataclass(frozen=True)
class StepContext:
    t: int
    price: float
    soc_prev: float
    q_hat: object
    price_history: np.ndarray
    price_forecast: np.ndarray


class Strategy(BaseEstimator):
    uses_controller = False

    def fit(self, calibration_prices=None, spec=None):
        self.spec_ = spec
        return self

    def observe(self, soc_prev, price, decision, q_hat, q_bar):
        return None


class RiskNeutralStrategy(Strategy):
    def decide(self, ctx):
        return risk_neutral_policy(ctx.price, ctx.soc_prev, ctx.q_hat, self.spec_)


class ConformalStrategy(Strategy):
    """Conformal dispatch with an online controller (either loss)."""

    uses_controller = True

    def __init__(self, controller=None):
        self.controller = controller

    def fit(self, calibration_prices=None, spec=None):
        super().fit(calibration_prices, spec)
        base = self.controller if self.controller is not None else ConformalController()
        self.controller_ = ConformalController(**base.get_params()).fit(calibration_prices, spec)
        return self

    def decide(self, ctx):
        return conformal_policy(ctx.price, ctx.soc_prev, ctx.q_hat, self.controller_.params(), self.spec_)

    def observe(self, soc_prev, price, decision, q_hat, q_bar):
        return self.controller_.observe(soc_prev, price, decision, q_hat, q_bar, self.spec_)

    @property
    def gamma(self):
        return self.controller_.gamma


class CVaRStrategy(Strategy):
    def __init__(self, config=None, run_seed=0):
        self.config = config
        self.run_seed = run_seed

    def decide(self, ctx):
        cfg = self.config or CVaRConfig()
        curves = scenario_curves(ctx.q_hat, cfg, ctx.t, self.run_seed)
        return cvar_policy(ctx.price, ctx.soc_prev, curves, None, cfg, self.spec_)


class ChanceConstrainedStrategy(Strategy):
    def __init__(self, config=None):
        self.config = config

    def decide(self, ctx):
        cfg = self.config or ChanceConfig()
        return chance_constrained_policy(
            ctx.price_history, ctx.soc_prev, ctx.price_forecast, ctx.q_hat, cfg, self.spec_
        )


class RobustStrategy(Strategy):
    def __init__(self, config=None):
        self.config = config

    def decide(self, ctx):
        cfg = self.config or RobustConfig()
        return robust_policy(ctx.price_history, ctx.soc_prev, ctx.price_forecast, ctx.q_hat, cfg, self.spec_)


class SwitchingCostStrategy(Strategy):
    def __init__(self, config=None):
        self.config = config

    def decide(self, ctx):
        return switching_cost_policy(ctx.price, ctx.soc_prev, ctx.q_hat, self.config or SwitchingConfig(), self.spec_)


def make_strategy(run_cfg, run_seed=0):
    """Instantiate the strategy selected in a :class:`RunConfig`."""
    name = run_cfg.strategy
    if name == "risk_neutral":
        return RiskNeutralStrategy()
    if name in ("cc_prediction", "cc_value"):
        loss_kind = "prediction_error" if name == "cc_prediction" else "value_error"
        return ConformalStrategy(ConformalController(loss_kind=loss_kind, **run_cfg.controller))
    if name == "cvar":
        return CVaRStrategy(run_cfg.cvar, run_seed)
    if name == "chance_constrained":
        return ChanceConstrainedStrategy(run_cfg.chance)
    if name == "robust":
        return RobustStrategy(run_cfg.robust)
    if name == "switching_cost":
        return SwitchingCostStrategy(run_cfg.switching)
    raise ValueError(f"unknown strategy {name!r}")
