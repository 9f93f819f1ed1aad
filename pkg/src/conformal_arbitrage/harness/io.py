"""Result files: trajectory CSV, loss ledger CSV, summary JSON and sweep tables.

Floats are written with ``repr`` so identical runs give byte-identical files.
Missing values (gamma and losses for non-conformal strategies, the loss of
the final step) are written as empty fields.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .backtest import TRAJECTORY_COLUMNS

LEDGER_COLUMNS = ("t", "gamma", "loss_raw", "loss_clipped", "cumulative_risk")
SWEEP_COLUMNS = ("param_path", "value", "metric", "metric_value")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_trajectory(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in TRAJECTORY_COLUMNS])


def read_trajectory(path):
    """Rows as dicts of floats (``None`` for empty fields; ``timestamp`` kept as text)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for key, text in row.items():
            if key == "timestamp":
                parsed[key] = text
            elif key == "t":
                parsed[key] = int(text)
            else:
                parsed[key] = float(text) if text != "" else None
        out.append(parsed)
    return out


def write_ledger(path, ledger):
    """Per-step controller ledger; row ``t`` holds the loss scored at ``t`` and the gamma used."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        if ledger is None:
            return
        risk = ledger.cumulative_risk_trace
        for t in range(len(ledger.losses)):
            w.writerow(
                (t, _fmt(ledger.gamma_trace[t]), _fmt(ledger.raw_losses[t]), _fmt(ledger.losses[t]), _fmt(risk[t]))
            )


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
