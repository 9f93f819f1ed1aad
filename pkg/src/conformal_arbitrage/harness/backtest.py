"""Online backtest loop, offline-optimal oracle, regret and parameter sweeps.

Timing of one step ``t`` (0-based):

1. observe ``price[t]`` and obtain the forecast ``q_hat[t]``;
2. decide with the selected strategy (conformal ones use ``gamma[t]``);
3. apply the decision to the state of charge;
4. when ``price[t+1]`` and ``q_hat[t+1]`` arrive, form the corrected curve
   ``q_bar[t] = bellman_backup(q_hat[t+1], price[t+1])``, score step ``t``
   and update ``gamma``.

The final step has no successor, so a run of ``T`` steps records ``T - 1``
losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..conformal import risk_identity
from ..domain import PriceSeries, apply_decision, step_profit
from ..dispatch import risk_neutral_policy
from ..exceptions import ArbitrageError, ConfigError
from ..forecaster import NoisyOracleForecaster, OracleForecaster, calibrate_noise
from ..valuefn import backward_induct, bellman_backup, sample, soc_grid, target_soc_curve, zero_curve
from .config import build_run_config, get_path, set_path
from .prices import load_prices, synthesize_prices
from .strategies import StepContext, make_strategy


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    timestamp: str
    price: float
    gamma: float | None
    p: float
    b: float
    soc: float
    step_profit: float
    cumulative_profit: float
    loss_clipped: float | None
    cumulative_risk: float | None


TRAJECTORY_COLUMNS = tuple(TrajectoryRecord.__dataclass_fields__)


@dataclass
class BacktestResult:
    records: list
    prices: PriceSeries
    truth: list
    forecasts_r2: float
    td_errors: np.ndarray
    ledger: object = None
    controller_config: object = None
    oracle_profit: float = float("nan")
    terminal_value: float = 0.0
    forecaster_config: object = None
    meta: dict = field(default_factory=dict)

    @property
    def total_profit(self):
        return self.records[-1].cumulative_profit if self.records else 0.0

    @property
    def score(self):
        """Cash plus the terminal valuation of the final state of charge."""
        return self.total_profit + self.terminal_value

    @property
    def regret(self):
        return compute_regret(self.score, self.oracle_profit)

    @property
    def final_soc(self):
        return self.records[-1].soc

    @property
    def cumulative_risk(self):
        return None if self.ledger is None else self.ledger.cumulative_risk

    @property
    def final_gamma(self):
        return None if self.ledger is None else float(self.ledger.gamma_trace[-1])

    def risk_residuals(self):
        if self.ledger is None:
            return np.zeros(0)
        return risk_identity(self.ledger, self.controller_config)

    def summary(self):
        return {
            "strategy": self.meta.get("strategy"),
            "seed": self.meta.get("seed"),
            "steps": len(self.records),
            "total_profit": self.total_profit,
            "terminal_value": self.terminal_value,
            "score": self.score,
            "oracle_profit": self.oracle_profit,
            "regret": self.regret,
            "cumulative_risk": self.cumulative_risk,
            "final_gamma": self.final_gamma,
            "final_soc": self.final_soc,
            "forecast_r2": self.forecasts_r2,
        }


def derive_seeds(seed, n=4):
    """Independent integer seeds (prices, forecaster, price forecast, scenarios)."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def resolve_prices(run_cfg, price_seed):
    if run_cfg.price_source == "file":
        series = load_prices(run_cfg.price_path, allow_gaps=run_cfg.allow_gaps)
        return series[: run_cfg.steps] if run_cfg.steps < len(series) else series
    return synthesize_prices(run_cfg.generator, price_seed, run_cfg.steps)


def terminal_curve(run_cfg, prices):
    E = run_cfg.spec.capacity
    if run_cfg.terminal_kind == "zero":
        return zero_curve(E)
    salvage = float(np.mean(prices)) if run_cfg.terminal_salvage == "mean" else float(run_cfg.terminal_salvage)
    return target_soc_curve(E, run_cfg.terminal_target, salvage)


def offline_oracle(prices, spec, initial_soc, terminal=None, curves=None):
    """Non-causal optimum: exact backward valuation then threshold dispatch on true curves.

    Returns ``(profit, decisions)`` where profit is cash plus the terminal
    valuation of the final SoC (plain cash under a zero terminal curve).
    """
    if isinstance(prices, PriceSeries):
        prices = prices.prices
    prices = np.asarray(prices, dtype=float)
    if curves is None:
        curves = backward_induct(prices, spec, terminal)
    soc = initial_soc
    cash = 0.0
    decisions = []
    for t, lam in enumerate(prices):
        d = risk_neutral_policy(float(lam), soc, curves[t + 1], spec)
        soc = apply_decision(soc, d, spec, float(lam))
        cash += step_profit(float(lam), d, spec)
        decisions.append(d)
    terminal = curves[-1]
    return cash + terminal.value_at(soc) - terminal.offset, decisions


def compute_regret(run_profit, oracle_profit, run_meta=None, oracle_meta=None):
    """Oracle profit minus run profit (non-negative up to round-off)."""
    if run_meta is not None and oracle_meta is not None and run_meta != oracle_meta:
        raise ValueError(f"run and oracle metadata differ: {run_meta} vs {oracle_meta}")
    return oracle_profit - run_profit


def _build_forecaster(run_cfg, truth, seed):
    if run_cfg.forecaster_kind == "oracle":
        return OracleForecaster().fit(truth), None
    template = run_cfg.forecaster.__class__(**{**vars(run_cfg.forecaster), "seed": seed})
    if run_cfg.target_r2 is not None:
        template = calibrate_noise(float(run_cfg.target_r2), truth, template)
    return NoisyOracleForecaster.from_config(template).fit(truth), template


def calibrate_forecaster(cfg, target_r2=None):
    """Calibrate the noisy oracle of a config against its own truth curves.

    Uses the same price and forecaster seeds as :func:`run_backtest`, so
    writing the returned ``noise_scale`` back into the config (with
    ``target_r2`` cleared) reproduces the calibrated run.
    """
    run_cfg = build_run_config(cfg) if isinstance(cfg, dict) else cfg
    target = run_cfg.target_r2 if target_r2 is None else target_r2
    if target is None:
        raise ConfigError("no target R^2 given")
    price_seed, fc_seed, _, _ = derive_seeds(run_cfg.seed)
    prices = resolve_prices(run_cfg, price_seed).prices
    truth = backward_induct(prices, run_cfg.spec, terminal_curve(run_cfg, prices))[1:]
    template = run_cfg.forecaster.__class__(**{**vars(run_cfg.forecaster), "seed": fc_seed})
    return calibrate_noise(float(target), truth, template)


def run_backtest(cfg, strategy=None, diagnostics=True):
    """Run one backtest from a config dict or :class:`RunConfig`.

    ``strategy`` optionally overrides the configured strategy object.
    ``diagnostics=False`` skips the forecast R^2 and the offline oracle
    (both reported as NaN), which roughly halves the cost of long runs.
    """
    run_cfg = build_run_config(cfg) if isinstance(cfg, dict) else cfg
    spec = run_cfg.spec
    price_seed, fc_seed, pf_seed, scen_seed = derive_seeds(run_cfg.seed)
    series = resolve_prices(run_cfg, price_seed)
    prices = series.prices
    T = len(prices)
    if T < 2:
        raise ConfigError("need at least two prices")
    terminal = terminal_curve(run_cfg, prices)
    curves = backward_induct(prices, spec, terminal)
    truth = curves[1:]
    forecaster, fc_cfg = _build_forecaster(run_cfg, truth, fc_seed)
    if strategy is None:
        strategy = make_strategy(run_cfg, scen_seed)
    strategy.fit(prices[: run_cfg.calibration_steps], spec)
    rng = np.random.default_rng(pf_seed)
    price_forecast = prices + rng.normal(0.0, 1.0, T) * run_cfg.price_forecast_std

    grid = soc_grid(spec.capacity)
    sampled_hat = np.empty((T if diagnostics else 0, len(grid)))
    sampled_true = np.empty_like(sampled_hat)
    td = np.zeros(max(T - 1, 0))
    records = []
    stamps = [str(s) for s in series.timestamps]
    soc = run_cfg.initial_soc
    cumulative = 0.0
    risk_sum = 0.0
    n_loss = 0
    q_hat = forecaster.produce(0)
    for t in range(T):
        lam = float(prices[t])
        try:
            ctx = StepContext(t, lam, soc, q_hat, prices[: t + 1], price_forecast[t + 1 :])
            gamma = strategy.gamma if strategy.uses_controller else None
            d = strategy.decide(ctx)
            new_soc = apply_decision(soc, d, spec, lam)
            if diagnostics:
                sampled_hat[t] = sample(q_hat, grid)
                sampled_true[t] = sample(truth[t], grid)
            loss = None
            if t + 1 < T:
                q_next = forecaster.produce(t + 1)
                q_bar = bellman_backup(q_next, float(prices[t + 1]), spec)
                td[t] = q_hat.value_at(new_soc) - q_bar.value_at(new_soc)
                out = strategy.observe(soc, lam, d, q_hat, q_bar)
                if out is not None:
                    loss = out[1]
                    risk_sum += loss
                    n_loss += 1
        except ArbitrageError as exc:
            exc.args = (f"step {t}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            exc.step = t
            raise
        profit = step_profit(lam, d, spec)
        cumulative += profit
        records.append(
            TrajectoryRecord(
                t=t,
                timestamp=stamps[t],
                price=lam,
                gamma=gamma,
                p=d.discharge,
                b=d.charge,
                soc=new_soc,
                step_profit=profit,
                cumulative_profit=cumulative,
                loss_clipped=loss,
                cumulative_risk=(risk_sum / n_loss) if loss is not None else None,
            )
        )
        soc = new_soc
        if t + 1 < T:
            q_hat = q_next

    r2 = oracle = float("nan")
    if diagnostics:
        err = sampled_hat - sampled_true
        sst = float(np.sum((sampled_true - sampled_true.mean()) ** 2))
        r2 = 1.0 - float(np.sum(err * err)) / sst if sst > 0 else float("nan")
        oracle, _ = offline_oracle(prices, spec, run_cfg.initial_soc, curves=curves)
    result = BacktestResult(
        records=records,
        prices=series,
        truth=truth,
        forecasts_r2=r2,
        td_errors=td,
        oracle_profit=oracle,
        terminal_value=terminal.value_at(soc) - terminal.offset,
        forecaster_config=fc_cfg,
        meta={"strategy": run_cfg.strategy, "seed": run_cfg.seed},
    )
    if strategy.uses_controller:
        result.ledger = strategy.controller_.ledger()
        result.controller_config = strategy.controller_.config_
    return result


SWEEP_METRICS = ("total_profit", "score", "oracle_profit", "regret", "cumulative_risk", "final_gamma", "final_soc")


def run_sweep(base_cfg, param_path, values):
    """One backtest per value with a shared seed; returns long-format rows.

    Each row is ``(param_path, value, metric, metric_value)``.
    """
    get_path(base_cfg, param_path)
    rows = []
    for value in values:
        result = run_backtest(set_path(base_cfg, param_path, value))
        summary = result.summary()
        for metric in SWEEP_METRICS:
            rows.append((param_path, value, metric, summary[metric]))
    return rows


__all__ = [
    "BacktestResult",
    "TrajectoryRecord",
    "TRAJECTORY_COLUMNS",
    "compute_regret",
    "derive_seeds",
    "offline_oracle",
    "run_backtest",
    "run_sweep",
    "terminal_curve",
]
