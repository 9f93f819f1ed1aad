"""Price ingestion (CSV) and a seeded synthetic price generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from ..domain import PriceSeries
from ..exceptions import ConfigError, DataError

STEPS_PER_DAY_5MIN = 288


@dataclass(frozen=True)
class PriceGeneratorSpec:
    """Daily sinusoid plus AR(1) noise plus symmetric spikes ($/MWh).

    ``noise_std`` is the stationary standard deviation of the AR(1) part and
    ``noise_halflife`` its half-life in steps. Spikes arrive independently
    with probability ``spike_prob`` per step, with random sign and
    exponentially distributed size of mean ``spike_scale``.
    """

    level: float = 40.0
    daily_amplitude: float = 15.0
    peak_hour: float = 18.0
    noise_std: float = 8.0
    noise_halflife: float = 6.0
    spike_prob: float = 0.01
    spike_scale: float = 60.0
    interval_minutes: float = 5.0
    start: str = "2023-01-01T00:00:00"

    def __post_init__(self):
        if self.noise_std < 0 or self.noise_halflife < 0:
            raise ConfigError("noise_std and noise_halflife must be >= 0")
        if not 0 <= self.spike_prob <= 1:
            raise ConfigError("spike_prob must lie in [0, 1]")
        if self.spike_scale < 0:
            raise ConfigError("spike_scale must be >= 0")
        if not self.interval_minutes > 0:
            raise ConfigError("interval_minutes must be > 0")

    @property
    def steps_per_day(self):
        return 24 * 60 / self.interval_minutes


def daily_shape(spec, n_steps):
    t = np.arange(n_steps)
    hours = t * spec.interval_minutes / 60.0
    return spec.level + spec.daily_amplitude * np.cos(2 * np.pi * (hours - spec.peak_hour) / 24.0)


def synthesize_prices(spec, seed, n_steps):
    """Deterministic synthetic series of ``n_steps`` prices."""
    if n_steps < 1:
        raise ConfigError("number of steps must be >= 1")
    rng = np.random.default_rng(seed)
    prices = daily_shape(spec, n_steps)
    if spec.noise_std > 0:
        phi = 0.0 if spec.noise_halflife == 0 else 0.5 ** (1.0 / spec.noise_halflife)
        z = rng.standard_normal(n_steps) * spec.noise_std
        innov = math.sqrt(1.0 - phi * phi)
        noise = np.empty(n_steps)
        noise[0] = z[0]
        for k in range(1, n_steps):
            noise[k] = phi * noise[k - 1] + innov * z[k]
        prices = prices + noise
    if spec.spike_prob > 0 and spec.spike_scale > 0:
        hits = rng.random(n_steps) < spec.spike_prob
        sign = np.where(rng.random(n_steps) < 0.5, -1.0, 1.0)
        size = rng.exponential(spec.spike_scale, n_steps)
        prices = prices + hits * sign * size
    return PriceSeries.from_prices(prices, spec.start, spec.interval_minutes)


def _parse_timestamp(text, lineno):
    try:
        return np.datetime64(datetime.fromisoformat(text.strip().replace("Z", "+00:00")).replace(tzinfo=None), "s")
    except ValueError:
        raise DataError(f"line {lineno}: bad timestamp {text!r}") from None


def load_prices(path, allow_gaps=False):
    """Read a ``timestamp,price`` CSV with a header row."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = [(i, r) for i, r in enumerate(rows, start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [c.strip().lower() for c in rows[0][1]]
    if header != ["timestamp", "price"]:
        raise DataError(f"{path}: line {rows[0][0]}: expected header 'timestamp,price'")
    if len(rows) == 1:
        raise DataError(f"{path}: no price rows")
    ts, px = [], []
    for lineno, row in rows[1:]:
        if len(row) != 2:
            raise DataError(f"line {lineno}: expected 2 columns, got {len(row)}")
        stamp = _parse_timestamp(row[0], lineno)
        try:
            value = float(row[1])
        except ValueError:
            raise DataError(f"line {lineno}: bad price {row[1]!r}") from None
        if not math.isfinite(value):
            raise DataError(f"line {lineno}: non-finite price")
        if ts and stamp <= ts[-1]:
            raise DataError(f"line {lineno}: timestamp {row[0].strip()} not after the previous row")
        ts.append(stamp)
        px.append(value)
    series = PriceSeries(np.array(ts, dtype="datetime64[s]"), np.array(px))
    if not allow_gaps and len(series) > 2:
        steps = np.diff(series.timestamps).astype(np.int64)
        vals, counts = np.unique(steps, return_counts=True)
        modal = vals[np.argmax(counts)]
        big = np.nonzero(steps > 2 * modal)[0]
        if len(big):
            k = int(big[0])
            raise DataError(f"line {rows[k + 2][0]}: gap of {steps[k]} s exceeds twice the modal interval {modal} s")
    return series


def write_prices(path, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("timestamp", "price"))
        for stamp, value in zip(series.timestamps, series.prices):
            w.writerow((str(stamp), repr(float(value))))


def interval_hours(series, default=5.0 / 60.0):
    """Modal sampling interval in hours."""
    if len(series) < 2:
        return default
    steps = np.diff(series.timestamps).astype(np.int64)
    vals, counts = np.unique(steps, return_counts=True)
    return float(vals[np.argmax(counts)]) / 3600.0
