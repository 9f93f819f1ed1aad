import os

import numpy as np
import pytest

from conformal_arbitrage import ConfigError, DataError
from conformal_arbitrage.harness.backtest import (
    calibrate_forecaster,
    compute_regret,
    derive_seeds,
    offline_oracle,
    run_backtest,
    run_sweep,
)
from conformal_arbitrage.harness.config import (
    STRATEGIES,
    build_run_config,
    default_config,
    deep_merge,
    get_path,
    load_config_file,
    set_path,
)
from conformal_arbitrage.harness.io import read_trajectory, write_ledger, write_summary, write_sweep, write_trajectory
from conformal_arbitrage.harness.prices import (
    PriceGeneratorSpec,
    daily_shape,
    interval_hours,
    load_prices,
    synthesize_prices,
    write_prices,
)
from conformal_arbitrage.harness.strategies import make_strategy

from oracles import enumerate_paths

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def small(**kw):
    base = {"prices": {"steps": 96}, "strategy": {"name": "cc_value"}, "forecaster": {"noise_scale": 6.0}}
    return deep_merge(default_config(**base), kw)


# ------------------------------------------------------------------ config


def test_defaults_build():
    rc = build_run_config(default_config())
    assert rc.spec.power_limit_per_step == pytest.approx(0.5 / 12)
    assert rc.initial_soc == 0.5 and rc.strategy == "risk_neutral"


@pytest.mark.parametrize(
    "override",
    [
        {"storage": {"efficiency": 1.5}},
        {"storage": {"initial_soc": 2.0}},
        {"terminal": {"kind": "other"}},
        {"strategy": {"name": "greedy"}},
        {"controller": {"epsilon": 2.0}},
        {"baselines": {"chance": {"gamma_threshold": 0.3}}},
        {"prices": {"source": "file", "path": "/no/such.csv"}},
        {"prices": {"generator": {"spike_prob": 2.0}}},
        {"forecaster": {"kind": "lstm"}},
    ],
)
def test_invalid_configs(override):
    with pytest.raises(ConfigError):
        build_run_config(default_config(**override))


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="storage.colour"):
        default_config(storage={"colour": 1})
    with pytest.raises(ConfigError):
        build_run_config(default_config(prices={"generator": {"nonsense": 1}}))


def test_dotted_paths():
    cfg = default_config()
    assert get_path(cfg, "controller.epsilon") == 0.1
    new = set_path(cfg, "controller.epsilon", 0.3)
    assert get_path(new, "controller.epsilon") == 0.3 and get_path(cfg, "controller.epsilon") == 0.1
    with pytest.raises(ConfigError):
        set_path(cfg, "controller.nope", 1)
    with pytest.raises(ConfigError):
        set_path(cfg, "controller", 1)
    assert get_path(set_path(cfg, "prices.generator.level", 10.0), "prices.generator.level") == 10.0


def test_load_config_file(tmp_path):
    prices = tmp_path / "p.csv"
    prices.write_text("timestamp,price\n2023-01-01T00:00:00,1\n2023-01-01T00:05:00,2\n")
    path = tmp_path / "run.toml"
    path.write_text('seed = 3\n[prices]\nsource = "file"\npath = "p.csv"\n')
    cfg = load_config_file(path)
    assert cfg["seed"] == 3 and cfg["prices"]["path"] == str(prices)
    path.write_text("seed = [")
    with pytest.raises(ConfigError):
        load_config_file(path)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.toml")


# ------------------------------------------------------------------ prices


def test_zero_noise_is_a_sinusoid():
    spec = PriceGeneratorSpec(noise_std=0.0, spike_prob=0.0)
    series = synthesize_prices(spec, 5, 288)
    t = np.arange(288) / 12.0
    np.testing.assert_allclose(series.prices, 40 + 15 * np.cos(2 * np.pi * (t - 18) / 24), atol=1e-12)
    assert series.prices.argmax() == 18 * 12


def test_synthetic_prices_seeded():
    spec = PriceGeneratorSpec()
    a, b = synthesize_prices(spec, 1, 500), synthesize_prices(spec, 1, 500)
    np.testing.assert_array_equal(a.prices, b.prices)
    assert not np.array_equal(a.prices, synthesize_prices(spec, 2, 500).prices)
    with pytest.raises(ConfigError):
        synthesize_prices(spec, 1, 0)


def test_synthetic_mean_near_level():
    spec = PriceGeneratorSpec()
    means = [synthesize_prices(spec, s, 8640).prices.mean() for s in range(20)]
    assert all(abs(m - 40.0) <= 2.0 for m in means)
    assert daily_shape(spec, 288).mean() == pytest.approx(40.0, abs=1e-9)


def test_price_round_trip(tmp_path):
    series = synthesize_prices(PriceGeneratorSpec(), 0, 50)
    path = tmp_path / "p.csv"
    write_prices(path, series)
    back = load_prices(path)
    np.testing.assert_array_equal(back.prices, series.prices)
    np.testing.assert_array_equal(back.timestamps, series.timestamps)
    assert interval_hours(back) == pytest.approx(5 / 60)


def test_price_golden_file():
    series = load_prices(os.path.join(GOLDEN, "prices.csv"))
    assert len(series) == 6
    assert series.prices[2] == -3.5


@pytest.mark.parametrize(
    "body, line",
    [
        ("timestamp,price\n2023-01-01T00:00:00,1\n2023-01-01T00:05:00,abc\n", "line 3"),
        ("timestamp,price\n2023-01-01T00:00:00,1\nnot-a-time,2\n", "line 3"),
        ("timestamp,price\n2023-01-01T00:05:00,1\n2023-01-01T00:00:00,2\n", "line 3"),
        ("timestamp,price\n2023-01-01T00:00:00,1,7\n", "line 2"),
        ("timestamp,price\n2023-01-01T00:00:00,nan\n", "line 2"),
        ("time,value\n", "line 1"),
        (
            "timestamp,price\n2023-01-01T00:00:00,1\n2023-01-01T00:05:00,1\n"
            "2023-01-01T00:10:00,1\n2023-01-01T01:00:00,1\n",
            "line 5",
        ),
    ],
)
def test_price_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=line):
        load_prices(path)


def test_gaps_allowed_on_request(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("timestamp,price\n2023-01-01T00:00:00,1\n2023-01-01T00:05:00,1\n2023-01-01T02:00:00,1\n")
    assert len(load_prices(path, allow_gaps=True)) == 3
    with pytest.raises(DataError):
        load_prices(tmp_path / "none.csv")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DataError, match="empty"):
        load_prices(tmp_path / "empty.csv")


# ---------------------------------------------------------------- backtest


def test_offline_oracle_matches_enumeration():
    from conformal_arbitrage import StorageSpec

    rng = np.random.default_rng(0)
    s = StorageSpec(0.2, 1.0, 1.0, 2.0)
    for _ in range(10):
        prices = rng.uniform(-10, 90, 5)
        start = int(rng.integers(0, 11))
        profit, decisions = offline_oracle(prices, s, start / 10)
        assert profit == pytest.approx(enumerate_paths(prices, 11, start, 2, 2.0), abs=1e-9)
        assert len(decisions) == 5


def test_oracle_forecast_has_zero_regret():
    cfg = default_config(prices={"steps": 288}, forecaster={"kind": "oracle"}, seed=4)
    res = run_backtest(cfg)
    assert res.regret == pytest.approx(0.0, abs=1e-9 * max(1.0, abs(res.oracle_profit)))
    assert np.max(np.abs(res.td_errors)) <= 1e-9
    assert res.forecasts_r2 == 1.0


def test_trajectory_consistency():
    res = run_backtest(small(seed=1))
    profits = np.array([r.step_profit for r in res.records])
    np.testing.assert_allclose([r.cumulative_profit for r in res.records], np.cumsum(profits), atol=1e-9)
    spec = build_run_config(small()).spec
    soc = 0.5
    for r in res.records:
        assert not (r.p > 0 and r.b > 0)
        soc = soc - r.p / spec.efficiency + r.b * spec.efficiency
        assert r.soc == pytest.approx(soc, abs=1e-12)
        assert -1e-12 <= r.soc <= spec.capacity + 1e-12
        assert not (r.price < 0 and r.p > 0)
    assert res.records[-1].loss_clipped is None and res.records[0].loss_clipped is not None
    assert len(res.ledger.losses) == len(res.records) - 1
    assert np.max(np.abs(res.risk_residuals())) <= 1e-9


def test_target_soc_terminal():
    cfg = small(terminal={"kind": "target_soc", "target_fraction": 0.8, "salvage": 60.0}, strategy={"name": "risk_neutral"})
    cfg = set_path(cfg, "forecaster.kind", "oracle")
    res = run_backtest(cfg)
    spec = build_run_config(cfg).spec
    assert abs(res.final_soc - 0.8) <= spec.power_limit_per_step + 1e-12
    assert res.score == pytest.approx(res.total_profit + res.terminal_value)


@pytest.mark.parametrize("name", STRATEGIES)
def test_every_strategy_runs(name):
    cfg = small(strategy={"name": name}, seed=2)
    cfg = set_path(cfg, "prices.steps", 40)
    res = run_backtest(cfg)
    assert len(res.records) == 40
    assert (res.ledger is not None) == (name in ("cc_prediction", "cc_value"))
    assert res.regret >= -1e-9


def test_same_seed_same_run():
    a, b = run_backtest(small(seed=7)), run_backtest(small(seed=7))
    assert a.records == b.records
    assert a.records != run_backtest(small(seed=8)).records


def test_derived_seeds():
    assert derive_seeds(3) == derive_seeds(3)
    assert len(set(derive_seeds(3))) == 4


def test_regret_metadata_check():
    assert compute_regret(4.0, 10.0) == 6.0
    with pytest.raises(ValueError):
        compute_regret(1.0, 2.0, {"seed": 1}, {"seed": 2})


def test_calibrate_forecaster_reproduces_r2():
    cfg = default_config(prices={"steps": 288}, seed=3)
    fc = calibrate_forecaster(cfg, 0.4)
    cfg2 = set_path(cfg, "forecaster.noise_scale", fc.noise_scale)
    assert abs(run_backtest(cfg2).forecasts_r2 - 0.4) <= 0.05
    with pytest.raises(ConfigError):
        calibrate_forecaster(cfg)


def test_sweep_rows():
    rows = run_sweep(small(prices={"steps": 30}), "controller.epsilon", [0.1, 0.3])
    assert len(rows) == 2 * 7
    assert {r[0] for r in rows} == {"controller.epsilon"}
    with pytest.raises(ConfigError):
        run_sweep(small(), "controller.nope", [1])


def test_strategy_factory_estimator_api():
    strat = make_strategy(build_run_config(small()))
    assert "controller" in strat.get_params()
    assert strat.uses_controller


# ---------------------------------------------------------------------- io


def test_outputs_are_byte_identical(tmp_path):
    for k in (1, 2):
        res = run_backtest(small(seed=11))
        d = tmp_path / str(k)
        d.mkdir()
        write_trajectory(d / "trajectory.csv", res.records)
        write_ledger(d / "ledger.csv", res.ledger)
        write_summary(d / "summary.json", res.summary())
    for name in ("trajectory.csv", "ledger.csv", "summary.json"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


def test_trajectory_round_trip(tmp_path):
    res = run_backtest(small(seed=5, prices={"steps": 20}))
    write_trajectory(tmp_path / "t.csv", res.records)
    rows = read_trajectory(tmp_path / "t.csv")
    assert [r["soc"] for r in rows] == [r.soc for r in res.records]
    assert rows[-1]["loss_clipped"] is None


def test_trajectory_golden(tmp_path):
    cfg = small(seed=0, prices={"steps": 12})
    write_trajectory(tmp_path / "t.csv", run_backtest(cfg).records)
    with open(os.path.join(GOLDEN, "trajectory.csv")) as fh:
        assert (tmp_path / "t.csv").read_text() == fh.read()


def test_summary_and_sweep_files(tmp_path):
    write_summary(tmp_path / "s.json", {"a": float("nan"), "b": np.float64(1.5), "c": np.int64(2)})
    assert (tmp_path / "s.json").read_text() == '{\n  "a": null,\n  "b": 1.5,\n  "c": 2\n}\n'
    write_sweep(tmp_path / "w.csv", [("x.y", 0.1, "score", 2.0), ("x.y", True, "final_gamma", None)])
    assert (tmp_path / "w.csv").read_text() == (
        "param_path,value,metric,metric_value\nx.y,0.1,score,2.0\nx.y,true,final_gamma,\n"
    )
