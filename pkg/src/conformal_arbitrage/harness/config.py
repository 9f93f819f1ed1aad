"""Run configuration: TOML loading, defaults, validation and dotted overrides.

Configs stay plain nested dicts until :func:`build_run_config` turns them
into a :class:`RunConfig`; sweeps edit the dict form through dotted paths
such as ``controller.epsilon``.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..baselines import ChanceConfig, CVaRConfig, RobustConfig, SwitchingConfig
from ..domain import StorageSpec
from ..exceptions import ConfigError
from ..forecaster import NoisyOracleConfig
from .prices import PriceGeneratorSpec

STRATEGIES = (
    "risk_neutral",
    "cc_prediction",
    "cc_value",
    "cvar",
    "chance_constrained",
    "robust",
    "switching_cost",
)
CONFORMAL_STRATEGIES = {"cc_prediction": "prediction_error", "cc_value": "value_error"}

DEFAULTS = {
    "seed": 0,
    "storage": {
        "power_mw": 0.5,
        "capacity_mwh": 1.0,
        "efficiency": 0.9,
        "marginal_cost": 0.0,
        "initial_soc": 0.5,
    },
    "terminal": {"kind": "zero", "target_fraction": 0.5, "salvage": "mean"},
    "prices": {
        "source": "synthetic",
        "path": "",
        "allow_gaps": False,
        "steps": 2016,
        "generator": {},
    },
    "forecaster": {
        "kind": "noisy_oracle",
        "noise_scale": 0.0,
        "bias": 0.0,
        "correlation_halflife": 0.0,
        "soc_correlation": 0.8,
        "flip_prob": 0.0,
        "target_r2": None,
    },
    "strategy": {"name": "risk_neutral"},
    "controller": {
        "epsilon": 0.1,
        "rho": 0.001,
        "sigma": 5.0,
        "gamma_init": 1.0,
        "gamma_bar": 3.0,
        "k": 0.1,
        "value_loss_scale": None,
        "mapping_kind": "decreasing_exp",
        "calibration_steps": 288,
    },
    "baselines": {
        "cvar": {"mu": 1.0, "nu": 0.95, "scenario_count": 20, "scenario_noise": 5.0},
        "chance": {"gamma_threshold": 0.6, "lookahead": 12, "price_std": 10.0},
        "robust": {"gamma_threshold": 1.0, "lookahead": 12, "ellipsoid_radius_scale": 10.0},
        "switching": {"zeta": 400.0},
    },
    "price_forecast": {"std": 10.0},
    "output": {"dir": "out", "dump_curves": False},
}


def deep_merge(base, override, path=""):
    """Recursive merge; unknown keys in ``override`` raise ConfigError."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            # the generator block is open-ended and validated by its dataclass
            if path != "prices.generator":
                raise ConfigError(f"unknown config key '{where}'")
            out[key] = value
        elif isinstance(base[key], dict) and base[key] is not None and key != "generator":
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a table")
            out[key] = deep_merge(base[key], value, where)
        elif key == "generator":
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def load_config_file(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = deep_merge(DEFAULTS, raw)
    src = cfg["prices"]
    if src["source"] == "file" and src["path"] and not os.path.isabs(src["path"]):
        src["path"] = os.path.join(os.path.dirname(os.path.abspath(path)), src["path"])
    return cfg


def default_config(**sections):
    return deep_merge(DEFAULTS, sections)


def get_path(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"bad config path '{dotted}'")
        node = node[part]
    return node


def set_path(cfg, dotted, value):
    """Copy of ``cfg`` with the scalar at ``dotted`` replaced."""
    out = copy.deepcopy(cfg)
    parts = dotted.split(".")
    node = out
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"bad config path '{dotted}'")
        node = node[part]
    if not isinstance(node, dict) or (parts[-1] not in node and parts[-2:-1] != ["generator"]):
        raise ConfigError(f"bad config path '{dotted}'")
    if isinstance(node.get(parts[-1]), dict):
        raise ConfigError(f"'{dotted}' is a table, not a scalar")
    node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    spec: StorageSpec
    initial_soc: float
    terminal_kind: str
    terminal_target: float
    terminal_salvage: object
    price_source: str
    price_path: str
    allow_gaps: bool
    steps: int
    generator: PriceGeneratorSpec
    forecaster_kind: str
    forecaster: NoisyOracleConfig
    target_r2: object
    strategy: str
    controller: dict
    calibration_steps: int
    cvar: CVaRConfig
    chance: ChanceConfig
    robust: RobustConfig
    switching: SwitchingConfig
    price_forecast_std: float
    output_dir: str
    dump_curves: bool
    seed: int

    @property
    def is_conformal(self):
        return self.strategy in CONFORMAL_STRATEGIES


def _build(cls, block, name, **extra):
    allowed = {f.name for f in fields(cls)}
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    try:
        return cls(**block, **extra)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build_run_config(cfg):
    """Validate a merged config dict and build a :class:`RunConfig`."""
    try:
        seed = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    st = cfg["storage"]
    prices = cfg["prices"]
    generator = _build(PriceGeneratorSpec, prices["generator"], "prices.generator")
    try:
        spec = StorageSpec.from_rating(
            float(st["power_mw"]),
            float(st["capacity_mwh"]),
            generator.interval_minutes / 60.0,
            float(st["efficiency"]),
            float(st["marginal_cost"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"storage: {exc}") from None
    initial = float(st["initial_soc"])
    if not 0 <= initial <= 1:
        raise ConfigError("storage.initial_soc is a fraction in [0, 1]")
    term = cfg["terminal"]
    if term["kind"] not in ("zero", "target_soc"):
        raise ConfigError("terminal.kind must be 'zero' or 'target_soc'")
    if not 0 <= float(term["target_fraction"]) <= 1:
        raise ConfigError("terminal.target_fraction must lie in [0, 1]")
    salvage = term["salvage"]
    if salvage != "mean" and not isinstance(salvage, (int, float)):
        raise ConfigError("terminal.salvage must be 'mean' or a number")
    if prices["source"] not in ("synthetic", "file"):
        raise ConfigError("prices.source must be 'synthetic' or 'file'")
    if prices["source"] == "file" and not os.path.isfile(prices["path"]):
        raise ConfigError(f"price file not found: {prices['path']!r}")
    if int(prices["steps"]) < 2:
        raise ConfigError("prices.steps must be >= 2")
    fc = dict(cfg["forecaster"])
    kind = fc.pop("kind")
    if kind not in ("oracle", "noisy_oracle"):
        raise ConfigError("forecaster.kind must be 'oracle' or 'noisy_oracle'")
    target_r2 = fc.pop("target_r2")
    forecaster = _build(NoisyOracleConfig, fc, "forecaster", seed=0)
    name = cfg["strategy"]["name"]
    if name not in STRATEGIES:
        raise ConfigError(f"strategy.name must be one of {STRATEGIES}")
    ctrl = dict(cfg["controller"])
    calibration_steps = int(ctrl.pop("calibration_steps"))
    if calibration_steps < 1:
        raise ConfigError("controller.calibration_steps must be >= 1")
    from ..conformal import ControllerConfig

    _build(ControllerConfig, ctrl, "controller", loss_kind="value_error")
    bl = cfg["baselines"]
    std = float(cfg["price_forecast"]["std"])
    if std < 0:
        raise ConfigError("price_forecast.std must be >= 0")
    return RunConfig(
        spec=spec,
        initial_soc=initial * spec.capacity,
        terminal_kind=term["kind"],
        terminal_target=float(term["target_fraction"]) * spec.capacity,
        terminal_salvage=salvage,
        price_source=prices["source"],
        price_path=prices["path"],
        allow_gaps=bool(prices["allow_gaps"]),
        steps=int(prices["steps"]),
        generator=generator,
        forecaster_kind=kind,
        forecaster=forecaster,
        target_r2=target_r2,
        strategy=name,
        controller=ctrl,
        calibration_steps=calibration_steps,
        cvar=_build(CVaRConfig, bl["cvar"], "baselines.cvar"),
        chance=_build(ChanceConfig, bl["chance"], "baselines.chance"),
        robust=_build(RobustConfig, bl["robust"], "baselines.robust"),
        switching=_build(SwitchingConfig, bl["switching"], "baselines.switching"),
        price_forecast_std=std,
        output_dir=cfg["output"]["dir"],
        dump_curves=bool(cfg["output"]["dump_curves"]),
        seed=seed,
    )
