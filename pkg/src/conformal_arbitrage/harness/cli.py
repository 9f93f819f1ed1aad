"""Command-line entry point.

Verbs: ``simulate``, ``oracle``, ``sweep``, ``gen-prices`` and
``calibrate-forecaster``. Exit codes: 0 ok, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from ..exceptions import ArbitrageError, ConfigError, DataError, NumericalError
from ..valuefn import write_curves
from .backtest import calibrate_forecaster, derive_seeds, offline_oracle, resolve_prices, run_backtest, run_sweep, terminal_curve
from .config import STRATEGIES, build_run_config, default_config, load_config_file, set_path
from .io import write_ledger, write_summary, write_sweep, write_trajectory
from .prices import synthesize_prices, write_prices

log = logging.getLogger("conformal_arbitrage")


def _load(args):
    cfg = load_config_file(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = set_path(cfg, "seed", args.seed)
    if getattr(args, "strategy", None) is not None:
        cfg = set_path(cfg, "strategy.name", args.strategy)
    if getattr(args, "steps", None) is not None:
        cfg = set_path(cfg, "prices.steps", args.steps)
    return cfg


def _out_dir(args, cfg):
    out = args.out or cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = _load(args)
    run_cfg = build_run_config(cfg)
    result = run_backtest(run_cfg)
    out = _out_dir(args, cfg)
    write_trajectory(os.path.join(out, "trajectory.csv"), result.records)
    write_summary(os.path.join(out, "summary.json"), result.summary())
    if result.ledger is not None:
        write_ledger(os.path.join(out, "ledger.csv"), result.ledger)
    if run_cfg.dump_curves:
        write_curves(os.path.join(out, "curves.csv"), result.truth)
    summary = result.summary()
    print(
        f"{summary['strategy']}: profit {summary['total_profit']:.2f}, "
        f"oracle {summary['oracle_profit']:.2f}, regret {summary['regret']:.2f}"
        + (f", risk {summary['cumulative_risk']:.4f}" if summary["cumulative_risk"] is not None else "")
    )
    return 0


def cmd_oracle(args):
    cfg = _load(args)
    run_cfg = build_run_config(cfg)
    price_seed = derive_seeds(run_cfg.seed)[0]
    series = resolve_prices(run_cfg, price_seed)
    terminal = terminal_curve(run_cfg, series.prices)
    profit, decisions = offline_oracle(series, run_cfg.spec, run_cfg.initial_soc, terminal)
    out = _out_dir(args, cfg)
    with open(os.path.join(out, "oracle_decisions.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "timestamp", "price", "p", "b"))
        for t, d in enumerate(decisions):
            w.writerow((t, str(series.timestamps[t]), repr(float(series.prices[t])), repr(d.discharge), repr(d.charge)))
    write_summary(os.path.join(out, "oracle_summary.json"), {"oracle_profit": profit, "steps": len(series)})
    print(f"offline optimum: {profit:.2f}")
    return 0


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args):
    cfg = _load(args)
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    rows = run_sweep(cfg, args.param, values)
    out = _out_dir(args, cfg)
    write_sweep(os.path.join(out, "sweep.csv"), rows)
    print(f"{len(values)} runs, {len(rows)} rows -> {os.path.join(out, 'sweep.csv')}")
    return 0


def cmd_gen_prices(args):
    cfg = _load(args)
    run_cfg = build_run_config(cfg)
    series = synthesize_prices(run_cfg.generator, derive_seeds(run_cfg.seed)[0], run_cfg.steps)
    path = args.out_file or os.path.join(_out_dir(args, cfg), "prices.csv")
    write_prices(path, series)
    print(f"{len(series)} prices -> {path}")
    return 0


def cmd_calibrate(args):
    cfg = _load(args)
    fc = calibrate_forecaster(cfg, args.target_r2)
    out = _out_dir(args, cfg)
    payload = {"target_r2": args.target_r2, **vars(fc)}
    write_summary(os.path.join(out, "forecaster.json"), payload)
    print(f"noise_scale {fc.noise_scale:.6g} for target R^2 {args.target_r2}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="conformal-arbitrage", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, strategy=True):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int, help="override prices.steps")
        if strategy:
            p.add_argument("--strategy", choices=STRATEGIES)

    p = sub.add_parser("simulate", help="run one backtest")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("oracle", help="offline-optimal profit and decisions")
    common(p, strategy=False)
    p.set_defaults(func=cmd_oracle)
    p = sub.add_parser("sweep", help="one backtest per parameter value")
    common(p)
    p.add_argument("--param", required=True, help="dotted config path, e.g. controller.epsilon")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("gen-prices", help="write a synthetic price CSV")
    common(p, strategy=False)
    p.add_argument("--out-file", help="CSV path (default <out>/prices.csv)")
    p.set_defaults(func=cmd_gen_prices)
    p = sub.add_parser("calibrate-forecaster", help="find the noise scale for a target R^2")
    common(p, strategy=False)
    p.add_argument("--target-r2", type=float, required=True)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, ArbitrageError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
