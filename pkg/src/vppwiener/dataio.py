"""CSV time series, plain tables and key=value summary records.

Time-series files: a header line naming channels, then a units comment
(``# units: s, rpm, deg, ...``), then comma-separated rows.  Floats are
written with ``repr`` so files round-trip exactly and are byte-stable.
"""
from pathlib import Path

import numpy as np

from .errors import DataError
from .ode import TimeGrid, TimeSeries

REQUIRED_CHANNELS = ("t", "omega_ref", "beta_ref", "omega", "beta", "thrust")
UNITS = {
    "t": "s", "omega_ref": "rpm", "beta_ref": "deg", "omega": "rpm", "beta": "deg",
    "thrust": "N", "thrust_std": "N", "lambda": "-", "I_m": "A", "I_a": "A",
    "u_omega": "-", "u_beta": "-",
}


def _fmt(v):
    v = float(v)
    if v == 0.0:
        return "0.0"       # no signed zeros
    return repr(v)


def write_timeseries(path, series, channels=None):
    """Write ``series`` (``t`` first) with a units comment line."""
    names = ["t"] + [c for c in (channels or series.names) if c != "t"]
    series.require(*names)
    cols = [series[n] for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        fh.write("# units: " + ", ".join(UNITS.get(n, "-") for n in names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _read_rows(path):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if not all(header) or len(set(header)) != len(header):
        raise DataError(f"{path}:1: malformed header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric field") from None
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def read_table(path):
    """Numeric CSV table -> ``{column: array}``."""
    header, data = _read_rows(path)
    return {h: data[:, k] for k, h in enumerate(header)}


def write_table(path, columns):
    """``{column: array}`` -> CSV (no units line)."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_timeseries(path, required=REQUIRED_CHANNELS):
    """Read a time-series CSV; the time step is inferred from ``t``."""
    header, data = _read_rows(path)
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: missing channel(s) {', '.join(missing)}")
    if "t" not in header:
        raise DataError(f"{path}: missing time channel 't'")
    if data.shape[0] < 2:
        raise DataError(f"{path}: need at least two samples")
    chans = {h: data[:, k] for k, h in enumerate(header)}
    t = chans["t"]
    dt = float(np.median(np.diff(t)))
    if not dt > 0:
        raise DataError(f"{path}: time channel is not increasing")
    try:
        return TimeSeries(TimeGrid(dt, t.size, float(t[0])), chans)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_summary(path, record):
    """Flat ``key=value`` lines in insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in record.items():
            if isinstance(v, (float, np.floating)):
                v = _fmt(v)
            fh.write(f"{k}={v}\n")


def read_summary(path):
    """Parse a ``key=value`` summary; numeric values become floats."""
    out = {}
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        try:
            out[k] = float(v) if v.lower() not in ("true", "false") else v.lower() == "true"
        except ValueError:
            out[k] = v
    return out
