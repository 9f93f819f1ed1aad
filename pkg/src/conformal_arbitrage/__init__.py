"""Risk-aware online arbitrage for a single energy-storage unit.

Exact piecewise-constant value curves, closed-form threshold dispatch, a
conformal controller that adapts prediction-set width online, baseline
strategies and a seeded backtest harness.
"""

from .conformal import ConformalController, ControllerConfig, ControllerState, RiskLedger
from .dispatch import PredictionSetParams, conformal_policy, halfwidth, idle_band, risk_neutral_policy
from .domain import DispatchDecision, PriceSeries, StorageSpec, apply_decision, feasible_bounds, step_profit
from .exceptions import (
    ArbitrageError,
    CalibrationError,
    ConfigError,
    CurveError,
    DataError,
    FeasibilityError,
    NumericalError,
)
from .forecaster import NoisyOracleConfig, NoisyOracleForecaster, OracleForecaster, measure_r2
from .valuefn import MarginalValueCurve, backward_induct, bellman_backup, integrate

__version__ = "0.1.0"

__all__ = [
    "ArbitrageError",
    "CalibrationError",
    "ConfigError",
    "ConformalController",
    "ControllerConfig",
    "ControllerState",
    "CurveError",
    "DataError",
    "DispatchDecision",
    "FeasibilityError",
    "MarginalValueCurve",
    "NoisyOracleConfig",
    "NoisyOracleForecaster",
    "NumericalError",
    "OracleForecaster",
    "PredictionSetParams",
    "PriceSeries",
    "RiskLedger",
    "StorageSpec",
    "apply_decision",
    "backward_induct",
    "bellman_backup",
    "conformal_policy",
    "feasible_bounds",
    "halfwidth",
    "idle_band",
    "integrate",
    "measure_r2",
    "risk_neutral_policy",
    "step_profit",
]
