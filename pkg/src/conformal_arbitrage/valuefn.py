"""Piecewise-constant marginal value curves and exact backward valuation.

A :class:`MarginalValueCurve` stores the marginal opportunity value ``q(e)``
of stored energy as a non-increasing step function over ``[0, E]``. Its
integral (anchored at ``offset = Q(0)``) is the concave value-to-go ``Q(e)``.

The one-step Bellman backup

    Qbar(e0) = max_{(p, b) feasible} price*(p - b) - C*p + Q(e0 - p/eta + b*eta)

is a sup-convolution of ``Q`` with a two-piece concave profit function, so the
marginal curve of the result is obtained exactly by merging slope sequences:
the charging piece has slope ``price/eta`` over a SoC length ``P*eta``, the
discharging piece ``(price - C)*eta`` over ``P/eta``.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .domain import PriceSeries
from .exceptions import CurveError

# Segments shorter than this fraction of capacity are folded into a neighbour.
_MIN_SEGMENT = 1e-12


class MarginalValueCurve:
    """Right-continuous, non-increasing step function over ``[0, E]``.

    Parameters
    ----------
    breakpoints : array-like of shape (n + 1,)
        Strictly increasing, starting at 0 and ending at the capacity.
    values : array-like of shape (n,)
        Marginal value ($/MWh) on ``[breakpoints[i], breakpoints[i+1])``.
    offset : float, default=0.0
        Value-to-go at empty storage, ``Q(0)``.
    """

    __slots__ = ("breakpoints", "values", "offset", "_cum", "_bpl", "_vl")

    def __init__(self, breakpoints, values, offset=0.0):
        bp = np.array(breakpoints, dtype=float)
        v = np.array(values, dtype=float)
        if bp.ndim != 1 or v.ndim != 1 or len(bp) != len(v) + 1 or len(v) == 0:
            raise CurveError("need n+1 breakpoints for n >= 1 segment values")
        if bp[0] != 0.0:
            raise CurveError("breakpoints must start at 0")
        if not np.all(np.diff(bp) > 0):
            raise CurveError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(bp)) and math.isfinite(offset)):
            raise CurveError("curve values must be finite")
        if np.any(np.diff(v) > 1e-9 * max(1.0, float(np.max(np.abs(v))))):
            raise CurveError("marginal values must be non-increasing")
        v = np.minimum.accumulate(v)
        bp, v = _merge_equal(bp, v)
        _init(self, bp, v, float(offset))

    @classmethod
    def _trusted(cls, bp, v, offset):
        obj = object.__new__(cls)
        _init(obj, bp, v, offset)
        return obj

    @classmethod
    def _from_lists(cls, bpl, vl, offset):
        """Fast path for already-validated, merged Python lists."""
        obj = object.__new__(cls)
        obj.breakpoints = np.array(bpl)
        obj.values = np.array(vl)
        obj.offset = offset
        obj._bpl = bpl
        obj._vl = vl
        obj._cum = _cumulative(bpl, vl)
        return obj

    @classmethod
    def constant(cls, value, capacity, offset=0.0):
        return cls([0.0, capacity], [value], offset)

    @property
    def capacity(self):
        return float(self.breakpoints[-1])

    @property
    def n_segments(self):
        return len(self.values)

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return (
            f"MarginalValueCurve(n_segments={self.n_segments}, capacity={self.capacity:g}, "
            f"range=[{self.values[-1]:.4g}, {self.values[0]:.4g}])"
        )

    def __eq__(self, other):
        if not isinstance(other, MarginalValueCurve):
            return NotImplemented
        return (
            np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
            and self.offset == other.offset
        )

    __hash__ = None

    def value_at(self, e):
        """Value-to-go ``Q(e)``; ``e`` is clamped into ``[0, E]``."""
        bp = self._bpl
        e = min(max(e, 0.0), bp[-1])
        i = bisect_right(bp, e, 0, len(bp) - 1) - 1
        return self.offset + self._cum[i] + self._vl[i] * (e - bp[i])

    def shifted(self, delta):
        """Curve with every marginal value moved by ``delta``."""
        return MarginalValueCurve._trusted(self.breakpoints, self.values + delta, self.offset)


def _init(obj, bp, v, offset):
    obj.breakpoints = bp
    obj.values = v
    obj.offset = offset
    obj._bpl = bpl = bp.tolist()
    obj._vl = vl = v.tolist()
    obj._cum = _cumulative(bpl, vl)


def _cumulative(bpl, vl):
    """``Q(bp[i]) - Q(0)`` for every segment start."""
    cum = [0.0] * len(vl)
    acc = 0.0
    for i in range(len(vl) - 1):
        acc += vl[i] * (bpl[i + 1] - bpl[i])
        cum[i + 1] = acc
    return cum


def _merge_equal(bp, v):
    if len(v) < 2:
        return bp, v
    keep = np.empty(len(v), dtype=bool)
    keep[0] = True
    np.not_equal(v[1:], v[:-1], out=keep[1:])
    if keep.all():
        return bp, v
    return np.append(bp[:-1][keep], bp[-1]), v[keep]


class ValueCurve:
    """Concave piecewise-linear value-to-go obtained by integrating a marginal curve."""

    def __init__(self, breakpoints, slopes, offset=0.0):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        self.offset = float(offset)
        self.knot_values = self.offset + np.concatenate(
            ([0.0], np.cumsum(self.slopes * np.diff(self.breakpoints)))
        )

    def __call__(self, e):
        e = np.asarray(e, dtype=float)
        if np.any(e < -1e-12) or np.any(e > self.breakpoints[-1] + 1e-12):
            raise CurveError("state of charge outside [0, E]")
        return np.interp(e, self.breakpoints, self.knot_values)

    @property
    def capacity(self):
        return float(self.breakpoints[-1])


def evaluate_marginal(curve, e):
    """Marginal value at ``e``; interior breakpoints take the right segment."""
    E = curve.capacity
    if not (-1e-12 * E <= e <= E * (1 + 1e-12)):
        raise CurveError(f"state of charge {e} outside [0, {E}]")
    return marginal_at(curve, e)


def marginal_at(curve, e):
    """Like :func:`evaluate_marginal` but clamps ``e`` instead of raising."""
    bp = curve._bpl
    i = bisect_right(bp, e, 1, len(bp) - 1) - 1
    return curve._vl[i]


def inverse_marginal(curve, y):
    """Largest SoC ``e`` with ``q(e) >= y`` (0 if none, E if all)."""
    vals = curve._vl
    lo, hi = 0, len(vals)
    while lo < hi:  # first index whose value is < y
        mid = (lo + hi) // 2
        if vals[mid] >= y:
            lo = mid + 1
        else:
            hi = mid
    return curve._bpl[lo]


def integrate(curve):
    return ValueCurve(curve.breakpoints, curve.values, curve.offset)


def sample(curve, soc_points):
    """Vectorised marginal evaluation on a SoC grid (clamped)."""
    idx = np.searchsorted(curve.breakpoints, soc_points, side="right") - 1
    n = len(curve.values)
    np.minimum(idx, n - 1, out=idx)
    np.maximum(idx, 0, out=idx)
    return curve.values[idx]


def soc_grid(capacity, n_segments=50):
    """Cell midpoints of a uniform ``n_segments`` partition of ``[0, capacity]``."""
    edges = np.linspace(0.0, capacity, n_segments + 1)
    return 0.5 * (edges[1:] + edges[:-1])


def resample(curve, n_segments=50):
    """Coarsen to ``n_segments`` uniform cells holding the cell-average marginal.

    Value-to-go is preserved exactly at cell edges and the result stays
    non-increasing, so it is a valid (outer-linearised) curve.
    """
    edges = np.linspace(0.0, curve.capacity, n_segments + 1)
    knots = integrate(curve)(edges) - curve.offset
    values = np.diff(knots) / np.diff(edges)
    values = np.minimum.accumulate(values)
    bp, v = _merge_equal(edges, values)
    return MarginalValueCurve._trusted(bp, v, curve.offset)


def zero_curve(capacity):
    return MarginalValueCurve.constant(0.0, capacity)


def target_soc_curve(capacity, target, salvage_value):
    """Terminal curve valuing energy below ``target`` at ``salvage_value``, above at 0."""
    if not 0 <= target <= capacity:
        raise CurveError("target SoC outside [0, E]")
    if target == 0 or salvage_value == 0:
        return zero_curve(capacity)
    if target == capacity:
        return MarginalValueCurve.constant(salvage_value, capacity)
    return MarginalValueCurve([0.0, target, capacity], [max(salvage_value, 0.0), 0.0])


def bellman_backup(next_curve, price, spec):
    """Marginal curve of the corrected value ``Qbar`` after one step at ``price``.

    Exact for piecewise-constant inputs; the output is non-increasing and
    carries the correct ``Qbar(0)`` offset.
    """
    eta = spec.efficiency
    P = spec.power_limit_per_step
    bp = next_curve._bpl
    vals = next_curve._vl
    n = len(vals)
    E = bp[-1]
    charge_len = P * eta
    # the two trading pieces, in decreasing slope order; each is spliced into
    # the (already sorted) next curve after any equal slopes
    pieces = [(price / eta, charge_len)]
    if price >= 0:
        pieces.append(((price - spec.marginal_cost) * eta, P / eta))

    tiny = _MIN_SEGMENT * E
    offset = next_curve.offset - price * P
    start = -charge_len
    out_bp = [0.0]
    out_v = []
    i = j = 0
    n_pieces = len(pieces)
    while start < E and (i < n or j < n_pieces):
        if j < n_pieces and (i >= n or pieces[j][0] > vals[i]):
            slope, length = pieces[j]
            j += 1
        else:
            slope = vals[i]
            length = bp[i + 1] - bp[i]
            i += 1
        end = start + length
        if start < 0.0:
            # Qbar(0) = Q(0) - price*P + area of merged slopes over [-P*eta, 0]
            offset += slope * ((end if end < 0.0 else 0.0) - start)
        lo = start if start > 0.0 else 0.0
        hi = end if end < E else E
        if hi - lo > tiny:
            if out_v and out_v[-1] == slope:
                out_bp[-1] = hi
            else:
                out_v.append(slope)
                out_bp.append(hi)
        start = end
    out_bp[-1] = E
    return MarginalValueCurve._from_lists(out_bp, out_v, offset)


def backward_induct(prices, spec, terminal=None, max_segments=None):
    """Exact backward valuation over a price series.

    Returns a list of ``T + 1`` curves: ``curves[T]`` is the terminal curve and
    ``curves[k] = bellman_backup(curves[k + 1], prices[k])``. ``curves[0]``
    values the initial SoC; the decision at step ``k`` (price ``prices[k]``)
    values its post-decision SoC with ``curves[k + 1]``.

    ``max_segments`` optionally resamples each curve to bound growth.
    """
    if isinstance(prices, PriceSeries):
        prices = prices.prices
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or len(prices) == 0:
        raise ValueError("prices must be a non-empty 1-D sequence")
    if terminal is None:
        terminal = zero_curve(spec.capacity)
    curves = [None] * (len(prices) + 1)
    curves[-1] = terminal
    cur = terminal
    for k in range(len(prices) - 1, -1, -1):
        cur = bellman_backup(cur, float(prices[k]), spec)
        if max_segments is not None and cur.n_segments > max_segments:
            cur = resample(cur, max_segments)
        curves[k] = cur
    return curves


CURVE_COLUMNS = ("t", "soc_start", "soc_end", "marginal_value", "value_at_zero")


def write_curves(path_or_file, curves, start_index=0):
    """Write curves in the columnar text format (one row per segment)."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for t, c in enumerate(curves, start=start_index):
            for i, v in enumerate(c.values):
                w.writerow((t, repr(float(c.breakpoints[i])), repr(float(c.breakpoints[i + 1])), repr(float(v)), repr(c.offset)))
    finally:
        if own:
            fh.close()


def read_curves(path_or_file):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, newline="") if own else path_or_file
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows or tuple(rows[0]) != CURVE_COLUMNS:
        raise CurveError(f"expected header {','.join(CURVE_COLUMNS)}")
    grouped = {}
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            t, a, b, v, off = int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4])
        except (ValueError, IndexError) as exc:
            raise CurveError(f"line {lineno}: {exc}") from None
        grouped.setdefault(t, []).append((a, b, v, off))
    curves = []
    for t in sorted(grouped):
        segs = grouped[t]
        bp = [segs[0][0]] + [s[1] for s in segs]
        curves.append(MarginalValueCurve(bp, [s[2] for s in segs], segs[0][3]))
    return curves


class ValueFunctionTransformer(TransformerMixin, BaseEstimator):
    """Map price series to marginal opportunity values on a fixed SoC grid.

    ``transform`` runs the exact backward valuation on each input series and
    samples the decision-time curves (``curves[1:]``) at ``n_segments`` cell
    midpoints, returning an array of shape ``(T, n_segments)``.
    """

    def __init__(self, spec=None, terminal=None, n_segments=50):
        self.spec = spec
        self.terminal = terminal
        self.n_segments = n_segments

    def fit(self, X=None, y=None):
        if self.spec is None:
            raise ValueError("spec is required")
        if int(self.n_segments) < 1:
            raise ValueError("n_segments must be >= 1")
        self.grid_ = soc_grid(self.spec.capacity, int(self.n_segments))
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "grid_")
        prices = X.prices if isinstance(X, PriceSeries) else np.asarray(X, dtype=float).ravel()
        self.curves_ = backward_induct(prices, self.spec, self.terminal)
        return np.vstack([sample(c, self.grid_) for c in self.curves_[1:]])
