"""Comparison strategies: CVaR, chance-constrained, robust and switching-cost dispatch.

CVaR is solved per step by searching a decision grid. The chance-constrained
and robust programs share one rolling-horizon solver: both reduce to

    max  sum_h [price_h * y_h - C * p_h] + Qhat(e_H) - Qhat(e_0) - kappa * ||u||

where ``y_h = p_h - b_h`` and ``u`` stacks the uncertain positions (future
net sales and the terminal SoC change). For the chance constraint
``kappa = z_Gamma * price_std``; for an ellipsoidal uncertainty set
``kappa = Gamma * radius_scale``. The norm is handled through
``||u|| = min_tau ||u||^2 / (2 tau) + tau / 2``, which makes each inner
problem a separable dynamic program over a SoC grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .dispatch import threshold_dispatch
from .domain import DispatchDecision, feasible_bounds
from .exceptions import ConfigError
from .forecaster import perturb_curve

GRID_POINTS = 201
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CVaRConfig:
    """``mu`` risk scaling, ``nu`` confidence, scenario generator settings ($/MWh)."""

    mu: float = 1.0
    nu: float = 0.95
    scenario_count: int = 20
    scenario_seed: int = 0
    scenario_noise: float = 5.0
    soc_correlation: float = 0.8

    def __post_init__(self):
        if not 0 <= self.mu <= 1:
            raise ConfigError("cvar.mu must lie in [0, 1]")
        if not 0 < self.nu < 1:
            raise ConfigError("cvar.nu must lie in (0, 1)")
        if int(self.scenario_count) < 1:
            raise ConfigError("cvar.scenario_count must be >= 1")
        if self.scenario_noise < 0:
            raise ConfigError("cvar.scenario_noise must be >= 0")


@dataclass(frozen=True)
class ChanceConfig:
    gamma_threshold: float = 0.6
    lookahead: int = 12
    price_std: float = 10.0

    def __post_init__(self):
        if not 0.5 <= self.gamma_threshold < 1:
            # below 0.5 the quantile term rewards variance and the program is not concave
            raise ConfigError("chance.gamma_threshold must lie in [0.5, 1)")
        if int(self.lookahead) < 1:
            raise ConfigError("chance.lookahead must be >= 1")
        if self.price_std < 0:
            raise ConfigError("chance.price_std must be >= 0")

    @property
    def kappa(self):
        return NormalDist().inv_cdf(self.gamma_threshold) * self.price_std


@dataclass(frozen=True)
class RobustConfig:
    gamma_threshold: float = 1.0
    lookahead: int = 12
    ellipsoid_radius_scale: float = 10.0

    def __post_init__(self):
        if self.gamma_threshold < 0:
            raise ConfigError("robust.gamma_threshold must be >= 0")
        if int(self.lookahead) < 1:
            raise ConfigError("robust.lookahead must be >= 1")
        if self.ellipsoid_radius_scale < 0:
            raise ConfigError("robust.ellipsoid_radius_scale must be >= 0")

    @property
    def kappa(self):
        return self.gamma_threshold * self.ellipsoid_radius_scale


@dataclass(frozen=True)
class SwitchingConfig:
    zeta: float = 400.0

    def __post_init__(self):
        if self.zeta < 0:
            raise ConfigError("switching.zeta must be >= 0")


# ---------------------------------------------------------------- CVaR


def decision_grid(soc_prev, price, spec, n_points=GRID_POINTS):
    """Candidate ``(discharge, charge)`` pairs: idle, then ``n_points - 1`` per side."""
    max_p, max_b = feasible_bounds(soc_prev, price, spec)
    p = np.linspace(0.0, max_p, n_points)[1:] if max_p > 0 else np.zeros(0)
    b = np.linspace(0.0, max_b, n_points)[1:] if max_b > 0 else np.zeros(0)
    discharge = np.concatenate(([0.0], p, np.zeros(len(b))))
    charge = np.concatenate(([0.0], np.zeros(len(p)), b))
    return discharge, charge


def _value_matrix(price, soc_prev, curves, discharge, charge, spec):
    eta = spec.efficiency
    soc = np.clip(soc_prev - discharge / eta + charge * eta, 0.0, spec.capacity)
    cash = price * (discharge - charge) - spec.marginal_cost * discharge
    rows = []
    for c in curves:
        knots = c.offset + np.concatenate(([0.0], np.cumsum(c.values * np.diff(c.breakpoints))))
        q = np.interp(soc, c.breakpoints, knots) - np.interp(soc_prev, c.breakpoints, knots)
        rows.append(cash + q)
    return np.vstack(rows)


def cvar_of(values, weights, nu):
    """Exact ``CVaR_nu`` of a discrete reward distribution, column-wise.

    ``max_VaR VaR - sum_w rho_w (VaR - V_w)^+ / (1 - nu)``; the maximum is
    attained at one of the scenario values.
    """
    values = np.atleast_2d(values)
    w = np.asarray(weights, dtype=float)[:, None, None]
    gaps = np.maximum(values[:, None, :] - values[None, :, :], 0.0)  # [var_idx, scen, col]
    cand = values - np.sum(w.transpose(1, 0, 2) * gaps, axis=1) / (1.0 - nu)
    return cand.max(axis=0)


def cvar_policy(price, soc_prev, scenario_curves, weights, cfg, spec, n_points=GRID_POINTS):
    """Maximise expected value plus ``mu * CVaR_nu`` over the decision grid."""
    curves = list(scenario_curves)
    if not curves:
        raise ValueError("empty scenario set")
    w = np.full(len(curves), 1.0 / len(curves)) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != len(curves) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-9) or np.any(w < 0):
        raise ValueError("scenario weights must be non-negative and sum to 1")
    discharge, charge = decision_grid(soc_prev, price, spec, n_points)
    V = _value_matrix(price, soc_prev, curves, discharge, charge, spec)
    objective = w @ V
    if cfg.mu > 0 and len(curves) > 1:
        objective = objective + cfg.mu * cvar_of(V, w, cfg.nu)
    i = int(np.argmax(objective))
    return DispatchDecision(float(discharge[i]), float(charge[i]))


def scenario_curves(q_hat, cfg, step, run_seed=0):
    """Seeded perturbations of the forecast curve used as CVaR scenarios."""
    n = int(cfg.scenario_count)
    if n == 1 or cfg.scenario_noise == 0:
        return [q_hat] * n
    rng = np.random.default_rng([int(run_seed), int(cfg.scenario_seed), int(step)])
    cells = 50
    r = cfg.soc_correlation
    common = rng.standard_normal((n, 1))
    local = rng.standard_normal((n, cells))
    noise = cfg.scenario_noise * (math.sqrt(r) * common + math.sqrt(1.0 - r) * local)
    return [perturb_curve(q_hat, noise[k]) for k in range(n)]


# ------------------------------------------------------- rolling horizon


def lookahead_grid(soc_prev, spec, n_points=51):
    """Uniform SoC grid with the current SoC inserted."""
    return np.union1d(np.linspace(0.0, spec.capacity, n_points), [soc_prev])


def _transitions(grid, price, spec):
    """Per-transition net sale ``y``, cash and feasibility for one step."""
    eta = spec.efficiency
    P = spec.power_limit_per_step
    de = grid[None, :] - grid[:, None]  # from i to j
    discharge = np.where(de < 0, -de * eta, 0.0)
    charge = np.where(de > 0, de / eta, 0.0)
    tol = 1e-9 * max(P, 1.0)
    ok = (discharge <= P + tol) & (charge <= P + tol)
    if price < 0:
        ok &= discharge == 0
    y = discharge - charge
    cash = price * y - spec.marginal_cost * discharge
    return y, cash, ok


def _solve_penalised(tables, terminal, start, penalty):
    """Grid DP maximising cash minus ``penalty * (y_h^2 + (e_H - e_0)^2)`` (h >= 1)."""
    H = len(tables)
    value = terminal[0] - penalty * terminal[1]
    choices = []
    for h in range(H - 1, -1, -1):
        y, cash, ok = tables[h]
        reward = cash - (penalty * y * y if h > 0 else 0.0)
        total = np.where(ok, reward + value[None, :], -np.inf)
        j = np.argmax(total, axis=1)
        choices.append(j)
        value = total[np.arange(len(j)), j]
    choices.reverse()
    path = [start]
    for h in range(H):
        path.append(int(choices[h][path[-1]]))
    return path


def _path_objective(path, tables, terminal, kappa):
    cash = 0.0
    sq = 0.0
    for h in range(len(tables)):
        y, c, _ = tables[h]
        i, j = path[h], path[h + 1]
        cash += c[i, j]
        if h > 0:
            sq += y[i, j] ** 2
    end = path[-1]
    sq += terminal[1][end]
    return cash + terminal[0][end] - kappa * math.sqrt(sq)


def lookahead_dispatch(prices, soc_prev, q_hat, spec, kappa=0.0, n_points=51, n_tau=24, refine_iter=30):
    """First-step decision of the risk-adjusted rolling-horizon program.

    ``prices[0]`` is the realised price and ``prices[1:]`` point forecasts.
    The terminal SoC is valued with ``q_hat``. Returns ``(decision, objective)``.
    """
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or len(prices) == 0:
        raise ValueError("need at least one price")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    grid = lookahead_grid(soc_prev, spec, n_points)
    start = int(np.searchsorted(grid, soc_prev))
    tables = [_transitions(grid, float(lam), spec) for lam in prices]
    knots = q_hat.offset + np.concatenate(([0.0], np.cumsum(q_hat.values * np.diff(q_hat.breakpoints))))
    qv = np.interp(grid, q_hat.breakpoints, knots)
    terminal = (qv - qv[start], (grid - soc_prev) ** 2)

    if kappa == 0:
        best = _solve_penalised(tables, terminal, start, 0.0)
        best_val = _path_objective(best, tables, terminal, 0.0)
    else:
        cache = {}

        def evaluate(log_tau):
            path = _solve_penalised(tables, terminal, start, kappa / (2.0 * math.exp(log_tau)))
            val = _path_objective(path, tables, terminal, kappa)
            cache[log_tau] = (val, path)
            return val

        # ||u|| ranges from 0 up to roughly sqrt(H) * max(P, E)
        top = math.log(math.sqrt(len(prices) + 1.0) * max(spec.power_limit_per_step, spec.capacity) * 4.0)
        taus = np.linspace(top - 14.0, top, n_tau)
        vals = [evaluate(lt) for lt in taus]
        k = int(np.argmax(vals))
        lo = taus[max(k - 1, 0)]
        hi = taus[min(k + 1, len(taus) - 1)]
        a = hi - _GOLDEN * (hi - lo)
        b = lo + _GOLDEN * (hi - lo)
        fa, fb = evaluate(a), evaluate(b)
        for _ in range(refine_iter):
            if fa >= fb:
                hi, b, fb = b, a, fa
                a = hi - _GOLDEN * (hi - lo)
                fa = evaluate(a)
            else:
                lo, a, fa = a, b, fb
                b = lo + _GOLDEN * (hi - lo)
                fb = evaluate(b)
        # the idle plan is always feasible and scores 0
        idle = [start] * (len(prices) + 1)
        cache[None] = (_path_objective(idle, tables, terminal, kappa), idle)
        best_val, best = max(cache.values(), key=lambda vp: vp[0])

    j = best[1]
    de = grid[j] - soc_prev
    eta = spec.efficiency
    P = spec.power_limit_per_step
    if de < 0:
        decision = DispatchDecision(min(-de * eta, P, soc_prev * eta), 0.0)
    elif de > 0:
        decision = DispatchDecision(0.0, min(de / eta, P))
    else:
        decision = DispatchDecision()
    return decision, float(best_val)


def chance_constrained_policy(prices_so_far, soc_prev, forecast_window, q_hat, cfg, spec):
    """Maximise the ``Gamma``-quantile of horizon profit under normal price errors."""
    window = _window(prices_so_far, forecast_window, cfg.lookahead)
    return lookahead_dispatch(window, soc_prev, q_hat, spec, kappa=cfg.kappa)[0]


def robust_policy(prices_so_far, soc_prev, forecast_window, q_hat, cfg, spec):
    """Maximise worst-case horizon profit over an ellipsoid of radius ``Gamma * scale``."""
    window = _window(prices_so_far, forecast_window, cfg.lookahead)
    return lookahead_dispatch(window, soc_prev, q_hat, spec, kappa=cfg.kappa)[0]


def _window(prices_so_far, forecast_window, lookahead):
    current = float(np.asarray(prices_so_far, dtype=float)[-1])
    future = np.asarray(forecast_window, dtype=float)[: int(lookahead) - 1]
    # a short forecast window near the end of the series truncates the horizon
    return np.concatenate(([current], future))


# ----------------------------------------------------------- switching


def switching_cost_policy(price, soc_prev, q_hat, cfg, spec):
    """Exact argmax of the one-step objective minus ``zeta * |e - e_prev|``.

    The penalty adds ``zeta`` to the charging threshold and subtracts it from
    the discharging one, so it is the threshold rule widened by ``zeta``.
    """
    return threshold_dispatch(price, soc_prev, q_hat, spec, widen=cfg.zeta)
