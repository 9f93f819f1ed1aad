"""Conformal controller, calibration losses and the cumulative-risk ledger.

The controller runs ``gamma <- gamma + rho * (epsilon - loss)`` on losses
clipped to ``[0, 1]``. ``gamma`` itself is never clamped, which keeps the
identity ``R_t = epsilon + (gamma_1 - gamma_{t+1}) / (rho * t)`` exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .dispatch import PredictionSetParams, conformal_policy, halfwidth
from .domain import step_profit
from .valuefn import marginal_at

LOSS_KINDS = ("prediction_error", "value_error")
MAPPING_KINDS = ("decreasing_exp", "paper_saturating")


@dataclass(frozen=True)
class ControllerConfig:
    """Controller and calibration-loss parameters.

    ``value_loss_scale`` normalises value-error losses ($); ``None`` means it
    is derived from calibration prices (see :func:`default_value_loss_scale`).
    """

    epsilon: float = 0.1
    rho: float = 0.001
    sigma: float = 5.0
    gamma_init: float = 1.0
    loss_kind: str = "value_error"
    gamma_bar: float = 3.0
    k: float = 0.1
    value_loss_scale: float | None = None
    mapping_kind: str = "decreasing_exp"

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.mapping_kind not in MAPPING_KINDS:
            raise ValueError(f"mapping_kind must be one of {MAPPING_KINDS}")
        if not self.gamma_bar > 0:
            raise ValueError("gamma_bar must be > 0")
        if not self.k > 0:
            raise ValueError("k must be > 0")
        if self.value_loss_scale is not None and not self.value_loss_scale > 0:
            raise ValueError("value_loss_scale must be > 0")


@dataclass
class ControllerState:
    """Mutable per-run controller state; owned by a single simulation."""

    gamma: float
    gamma_init: float
    step_count: int = 0
    running_abs_q_error_sum: float = 0.0
    q_error_count: int = 0
    loss_history: list = field(default_factory=list)
    raw_loss_history: list = field(default_factory=list)
    gamma_trace: list = field(default_factory=list)

    @classmethod
    def initial(cls, cfg):
        return cls(gamma=cfg.gamma_init, gamma_init=cfg.gamma_init, gamma_trace=[cfg.gamma_init])

    @property
    def mean_abs_q_error(self):
        if self.q_error_count == 0:
            return 0.0
        return self.running_abs_q_error_sum / self.q_error_count


@dataclass(frozen=True)
class RiskLedger:
    """Snapshot of the loss ledger: per-step clipped losses and gamma trace."""

    losses: np.ndarray
    raw_losses: np.ndarray
    gamma_trace: np.ndarray

    @classmethod
    def from_state(cls, state):
        return cls(
            np.asarray(state.loss_history, dtype=float),
            np.asarray(state.raw_loss_history, dtype=float),
            np.asarray(state.gamma_trace, dtype=float),
        )

    @property
    def cumulative_risk_trace(self):
        """``R_t`` for ``t = 1..n``."""
        if len(self.losses) == 0:
            return np.zeros(0)
        return np.cumsum(self.losses) / np.arange(1, len(self.losses) + 1)

    @property
    def cumulative_risk(self):
        """Mean clipped loss so far (0 before any loss is recorded)."""
        if len(self.losses) == 0:
            return 0.0
        return float(self.cumulative_risk_trace[-1])


def update_gamma(state, loss, cfg):
    """Apply one controller step with a clipped loss; mutates and returns ``state``."""
    if not 0.0 <= loss <= 1.0:
        raise ValueError(f"loss {loss} outside [0, 1]; clip it first")
    state.gamma = state.gamma + cfg.rho * (cfg.epsilon - loss)
    state.step_count += 1
    state.loss_history.append(loss)
    state.gamma_trace.append(state.gamma)
    return state


def clip_loss(raw, cfg):
    """Normalise a raw loss by its scale and clamp into ``[0, 1]``."""
    if cfg.loss_kind == "value_error":
        if cfg.value_loss_scale is None:
            raise ValueError("value_loss_scale is unset; fit the controller first")
        scaled = raw / cfg.value_loss_scale
    else:
        scaled = raw / cfg.gamma_bar
    return min(max(scaled, 0.0), 1.0)


def reference_gamma(mean_q_error, cfg):
    """Reference control variable for an observed mean prediction error."""
    if cfg.mapping_kind == "decreasing_exp":
        return cfg.gamma_bar * math.exp(-cfg.k * mean_q_error)
    return cfg.gamma_bar * (1.0 - math.exp(-cfg.k * mean_q_error))


def loss_prediction_error(state, q_hat_at_exec, q_bar_at_exec, cfg):
    """Record ``|q_hat - q_bar|`` at the executed SoC and return ``gamma - gamma_ref``.

    Updates the running mean prediction error held in ``state``.
    """
    state.running_abs_q_error_sum += abs(q_hat_at_exec - q_bar_at_exec)
    state.q_error_count += 1
    return state.gamma - reference_gamma(state.mean_abs_q_error, cfg)


def loss_value_error(soc_prev, price, q_hat, q_bar, params, spec, cfg=None):
    """Raw temporal value error ``|Vbar - Vhat|`` for one step.

    Both decisions come from the conformal policy with the same ``params``:
    one on the corrected curve ``q_bar``, one on the executed forecast
    ``q_hat``. Both are valued with the corrected value-to-go.
    """
    eta = spec.efficiency
    d_bar = conformal_policy(price, soc_prev, q_bar, params, spec)
    d_hat = conformal_policy(price, soc_prev, q_hat, params, spec)
    if d_bar == d_hat:
        return 0.0
    e_bar = soc_prev - d_bar.discharge / eta + d_bar.charge * eta
    e_hat = soc_prev - d_hat.discharge / eta + d_hat.charge * eta
    v_bar = step_profit(price, d_bar, spec) + q_bar.value_at(e_bar)
    v_hat = step_profit(price, d_hat, spec) + q_bar.value_at(e_hat)
    return abs(v_bar - v_hat)


def risk_identity(ledger, cfg):
    """Residuals ``R_t - epsilon - (gamma_1 - gamma_{t+1}) / (rho t)`` for every ``t``."""
    n = len(ledger.losses)
    if n == 0:
        return np.zeros(0)
    t = np.arange(1, n + 1)
    g = ledger.gamma_trace
    return ledger.cumulative_risk_trace - cfg.epsilon - (g[0] - g[1 : n + 1]) / (cfg.rho * t)


def default_value_loss_scale(calibration_prices, spec, quantile=99.0):
    """``P`` times the given percentile of ``|price|`` (floored at 1 cent)."""
    prices = np.abs(np.asarray(calibration_prices, dtype=float))
    scale = spec.power_limit_per_step * float(np.percentile(prices, quantile)) if len(prices) else 0.0
    return max(scale, 0.01)


class ConformalController(BaseEstimator):
    """Online conformal controller driving prediction-set width.

    Call :meth:`fit` once with calibration prices (sets the value-loss scale
    if unset and resets state), then alternate :meth:`params` for the
    current prediction set and :meth:`observe` once the next price and
    forecast arrive.
    """

    def __init__(
        self,
        epsilon=0.1,
        rho=0.001,
        sigma=5.0,
        gamma_init=1.0,
        loss_kind="value_error",
        gamma_bar=3.0,
        k=0.1,
        value_loss_scale=None,
        mapping_kind="decreasing_exp",
    ):
        self.epsilon = epsilon
        self.rho = rho
        self.sigma = sigma
        self.gamma_init = gamma_init
        self.loss_kind = loss_kind
        self.gamma_bar = gamma_bar
        self.k = k
        self.value_loss_scale = value_loss_scale
        self.mapping_kind = mapping_kind

    def fit(self, calibration_prices=None, spec=None):
        scale = self.value_loss_scale
        if scale is None and self.loss_kind == "value_error":
            if calibration_prices is None or spec is None:
                raise ValueError("calibration prices and spec are needed to derive value_loss_scale")
            scale = default_value_loss_scale(calibration_prices, spec)
        self.config_ = ControllerConfig(**{**self.get_params(), "value_loss_scale": scale})
        self.state_ = ControllerState.initial(self.config_)
        return self

    @property
    def gamma(self):
        return self.state_.gamma

    def params(self):
        return PredictionSetParams(self.state_.gamma, self.config_.sigma)

    def halfwidth(self):
        return halfwidth(self.params())

    def observe(self, soc_prev, price, decision, q_hat, q_bar, spec):
        """Score the decision made at the previous step and update ``gamma``.

        ``q_bar`` is the corrected curve (one backup of the next forecast
        under the next realised price). Returns ``(raw, clipped)``.
        """
        cfg = self.config_
        if cfg.loss_kind == "prediction_error":
            e_exec = soc_prev - decision.discharge / spec.efficiency + decision.charge * spec.efficiency
            raw = loss_prediction_error(self.state_, marginal_at(q_hat, e_exec), marginal_at(q_bar, e_exec), cfg)
        else:
            raw = loss_value_error(soc_prev, price, q_hat, q_bar, self.params(), spec, cfg)
        clipped = clip_loss(raw, cfg)
        self.state_.raw_loss_history.append(raw)
        update_gamma(self.state_, clipped, cfg)
        return raw, clipped

    def ledger(self):
        return RiskLedger.from_state(self.state_)
