"""Configuration, price data, the backtest loop, result files and the CLI."""

from .backtest import BacktestResult, TrajectoryRecord, compute_regret, offline_oracle, run_backtest, run_sweep
from .config import RunConfig, build_run_config, default_config, load_config_file
from .prices import PriceGeneratorSpec, load_prices, synthesize_prices, write_prices

__all__ = [
    "BacktestResult",
    "PriceGeneratorSpec",
    "RunConfig",
    "TrajectoryRecord",
    "build_run_config",
    "compute_regret",
    "default_config",
    "load_config_file",
    "load_prices",
    "offline_oracle",
    "run_backtest",
    "run_sweep",
    "synthesize_prices",
    "write_prices",
]
