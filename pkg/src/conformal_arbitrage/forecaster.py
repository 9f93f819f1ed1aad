"""Synthetic value-curve forecasters with controllable accuracy.

The noisy oracle perturbs the exact marginal curves with seeded noise on a
fixed grid of SoC cells and projects the result back onto non-increasing
step functions. Noise is AR(1) in time and partly shared across cells, so
errors shift a whole curve as well as its shape. A bias term and a random
level flip produce systematically wrong forecasts (negative R^2).

Forecasters are fitted on the *decision-time* truth list: ``truth[t]`` is the
curve valuing the post-decision SoC of step ``t`` (``curves[t + 1]`` of
:func:`~conformal_arbitrage.valuefn.backward_induct`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import CalibrationError, NumericalError
from .valuefn import MarginalValueCurve, sample, soc_grid

try:  # compiled PAV kernel; the public wrapper adds ~100us of validation per call
    from sklearn._isotonic import _inplace_contiguous_isotonic_regression as _pav
except ImportError:  # pragma: no cover
    _pav = None


def decreasing_projection(values, weights):
    """Weighted least-squares projection onto non-increasing sequences."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2 or np.all(values[1:] <= values[:-1]):
        return values
    if _pav is None:  # pragma: no cover
        from sklearn.isotonic import isotonic_regression

        return isotonic_regression(values, sample_weight=weights, increasing=False)
    y = np.ascontiguousarray(-values)
    w = np.ascontiguousarray(weights, dtype=float).copy()
    _pav(y, w)
    return -y


@dataclass(frozen=True)
class NoisyOracleConfig:
    """Noise model of the noisy oracle.

    ``noise_scale`` and ``bias`` are in $/MWh; ``correlation_halflife`` is in
    steps (0 gives independent draws per step). ``soc_correlation`` is the
    share of noise variance common to every cell of a curve, and
    ``flip_prob`` the per-step probability of mirroring the curve level
    about the grand mean of the truth.
    """

    noise_scale: float = 0.0
    bias: float = 0.0
    correlation_halflife: float = 0.0
    seed: int = 0
    soc_correlation: float = 0.8
    flip_prob: float = 0.0
    n_cells: int = 50

    def __post_init__(self):
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be >= 0")
        if not self.correlation_halflife >= 0:
            raise ValueError("correlation_halflife must be >= 0")
        if not 0 <= self.soc_correlation <= 1:
            raise ValueError("soc_correlation must lie in [0, 1]")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")
        if int(self.n_cells) < 1:
            raise ValueError("n_cells must be >= 1")

    @property
    def is_exact(self):
        return self.noise_scale == 0 and self.bias == 0 and self.flip_prob == 0

    @property
    def ar_coefficient(self):
        h = self.correlation_halflife
        return 0.0 if h == 0 else 0.5 ** (1.0 / h)


@dataclass(frozen=True)
class AccuracyReport:
    r_squared: float
    mean_abs_error: float
    count: int
    degenerate: bool = False


def _ar1(rng, shape, phi):
    """Unit-variance stationary AR(1) along axis 0."""
    z = rng.standard_normal(shape)
    if phi == 0:
        return z
    out = np.empty(shape)
    out[0] = z[0]
    innov = math.sqrt(1.0 - phi * phi)
    for t in range(1, shape[0]):
        out[t] = phi * out[t - 1] + innov * z[t]
    return out


def noise_matrix(cfg, n_steps):
    """Seeded per-(step, cell) additive noise and the per-step flip mask."""
    rng = np.random.default_rng(cfg.seed)
    phi = cfg.ar_coefficient
    n = int(cfg.n_cells)
    common = _ar1(rng, (n_steps, 1), phi)
    local = _ar1(rng, (n_steps, n), phi)
    flips = rng.random(n_steps) < cfg.flip_prob
    r = cfg.soc_correlation
    noise = cfg.noise_scale * (math.sqrt(r) * common + math.sqrt(1.0 - r) * local) + cfg.bias
    return noise, flips


def perturb_curve(curve, cell_noise, level_shift=0.0):
    """Add noise to the segment values of ``curve`` and repair monotonicity.

    Each segment takes the noise of the SoC cell holding its midpoint, so the
    breakpoints are kept and a zero perturbation returns the input values.
    """
    noise = cell_noise.tolist() if hasattr(cell_noise, "tolist") else list(cell_noise)
    n = len(noise)
    bp = curve._bpl
    scale = n / curve.capacity
    vals = [
        v + noise[min(int(0.5 * (bp[k] + bp[k + 1]) * scale), n - 1)] + level_shift
        for k, v in enumerate(curve._vl)
    ]
    if any(vals[k + 1] > vals[k] for k in range(len(vals) - 1)):
        lengths = np.diff(curve.breakpoints)
        vals = decreasing_projection(np.array(vals), lengths).tolist()
    out_bp = [0.0]
    out_v = []
    for k, v in enumerate(vals):
        if out_v and out_v[-1] == v:
            out_bp[-1] = bp[k + 1]
        else:
            out_v.append(v)
            out_bp.append(bp[k + 1])
    return MarginalValueCurve._from_lists(out_bp, out_v, curve.offset)


def _validated_truth(truth_curves):
    curves = list(truth_curves)
    if not curves:
        raise ValueError("truth_curves is empty")
    return curves


def oracle_forecast(t, truth_curves):
    """Perfect-information forecast: ``truth_curves[t]`` itself."""
    if not 0 <= t < len(truth_curves):
        raise IndexError(f"step {t} outside [0, {len(truth_curves)})")
    return truth_curves[t]


class OracleForecaster(BaseEstimator):
    """Forecaster returning the exact decision-time curves."""

    def fit(self, truth_curves):
        self.truth_ = _validated_truth(truth_curves)
        return self

    def produce(self, t, price_history=None):
        check_is_fitted(self, "truth_")
        return oracle_forecast(t, self.truth_)

    def predict(self, steps):
        return [self.produce(t) for t in steps]


class NoisyOracleForecaster(BaseEstimator):
    """Truth plus seeded AR(1) noise, projected back onto valid curves.

    ``fit`` draws the whole noise path up front, so ``produce(t)`` is cheap
    and the sequence depends only on the config.
    """

    def __init__(
        self,
        noise_scale=0.0,
        bias=0.0,
        correlation_halflife=0.0,
        seed=0,
        soc_correlation=0.8,
        flip_prob=0.0,
        n_cells=50,
    ):
        self.noise_scale = noise_scale
        self.bias = bias
        self.correlation_halflife = correlation_halflife
        self.seed = seed
        self.soc_correlation = soc_correlation
        self.flip_prob = flip_prob
        self.n_cells = n_cells

    @classmethod
    def from_config(cls, cfg):
        return cls(**vars(cfg))

    @property
    def config(self):
        return NoisyOracleConfig(**self.get_params())

    def fit(self, truth_curves):
        cfg = self.config
        self.truth_ = _validated_truth(truth_curves)
        self.noise_, self.flips_ = noise_matrix(cfg, len(self.truth_))
        if cfg.flip_prob > 0:
            grid = soc_grid(self.truth_[0].capacity, int(cfg.n_cells))
            self.cell_means_ = np.array([float(np.mean(sample(c, grid))) for c in self.truth_])
            self.grand_mean_ = float(np.mean(self.cell_means_))
        return self

    def produce(self, t, price_history=None):
        check_is_fitted(self, "truth_")
        truth = oracle_forecast(t, self.truth_)
        if self.noise_scale == 0 and self.bias == 0 and self.flip_prob == 0:
            return truth
        shift = 2.0 * (self.grand_mean_ - self.cell_means_[t]) if self.flips_[t] else 0.0
        return perturb_curve(truth, self.noise_[t], shift)

    def predict(self, steps):
        return [self.produce(t) for t in steps]


def noisy_oracle_forecast(t, truth_curves, cfg):
    """One noisy forecast; draws the full noise path, so prefer the estimator in loops."""
    return NoisyOracleForecaster.from_config(cfg).fit(truth_curves).produce(t)


def measure_r2(predicted, truth, n_cells=50):
    """Pooled R^2 of marginal values over every (step, cell midpoint) pair."""
    predicted, truth = list(predicted), list(truth)
    if not truth:
        raise ValueError("empty input")
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth differ in length")
    grid = soc_grid(truth[0].capacity, n_cells)
    y = np.concatenate([sample(c, grid) for c in truth])
    yhat = np.concatenate([sample(c, grid) for c in predicted])
    err = yhat - y
    sse = float(np.dot(err, err))
    dev = y - y.mean()
    sst = float(np.dot(dev, dev))
    mae = float(np.mean(np.abs(err)))
    if sst <= 1e-12 * max(1.0, float(np.dot(y, y))):
        return AccuracyReport(float("nan"), mae, len(y), degenerate=True)
    return AccuracyReport(1.0 - sse / sst, mae, len(y))


def _r2_at(scale, truth, template):
    cfg = replace(template, noise_scale=scale)
    fc = NoisyOracleForecaster.from_config(cfg).fit(truth)
    return measure_r2(fc.predict(range(len(truth))), truth, int(cfg.n_cells)).r_squared


def calibrate_noise(target_r2, truth_curves, cfg_template=None, tolerance=0.05, max_iter=60):
    """Bisect ``noise_scale`` so the measured R^2 lands within ``tolerance`` of the target.

    Bias, flip probability and the seed are taken from the template. Raises
    CalibrationError (with the achieved ``(low, high)`` R^2 bracket) when the
    target lies above what zero noise achieves.
    """
    if not target_r2 <= 1:
        raise ValueError("target_r2 must be <= 1")
    truth = _validated_truth(truth_curves)
    template = cfg_template or NoisyOracleConfig()
    r_hi = _r2_at(0.0, truth, template)
    if math.isnan(r_hi):
        raise NumericalError("truth curves have zero variance")
    if abs(r_hi - target_r2) <= tolerance:
        return replace(template, noise_scale=0.0)
    if r_hi < target_r2:
        raise CalibrationError(
            f"target R^2 {target_r2} above the zero-noise value {r_hi:.4f}", bracket=(-math.inf, r_hi)
        )
    lo, hi = 0.0, 1.0
    r = _r2_at(hi, truth, template)
    while r > target_r2:
        lo, hi = hi, hi * 2.0
        if hi > 1e8:
            raise CalibrationError("noise scale diverged", bracket=(r, r_hi))
        r = _r2_at(hi, truth, template)
    r_lo_scale = r_hi
    for _ in range(max_iter):
        if abs(r - target_r2) <= tolerance / 4:
            return replace(template, noise_scale=hi)
        mid = 0.5 * (lo + hi)
        r_mid = _r2_at(mid, truth, template)
        if r_mid > target_r2:
            lo, r_lo_scale = mid, r_mid
        else:
            hi, r = mid, r_mid
    best_scale, best_r = min(((lo, r_lo_scale), (hi, r)), key=lambda p: abs(p[1] - target_r2))
    if abs(best_r - target_r2) <= tolerance:
        return replace(template, noise_scale=best_scale)
    raise CalibrationError(f"no scale reaches R^2 {target_r2} within {tolerance}", bracket=(r, r_lo_scale))
