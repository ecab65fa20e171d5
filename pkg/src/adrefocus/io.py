"""Deterministic CSV / JSON artifacts and their readers.

Floats are written with ``repr`` (shortest round-trip form), rows in a
fixed order and JSON with sorted keys, so identical inputs give
byte-identical files and every CSV reads back without loss.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .model import TransmissionTrace
from .units import ordinary

TRACE_COLUMNS = ("time_s", "intensity", "alpha")
SNAPSHOT_COLUMNS = ("delta_hz", "mx", "my", "mz")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns, rows) -> Path:
    """Write named columns; ``rows`` is a 2-D array or an iterable of rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> dict:
    """Columns of a numeric CSV as float arrays, keyed by header name."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(x) for x in row] for row in r if row]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, k].copy() for k, name in enumerate(header)}


def write_trace(path, trace: TransmissionTrace) -> Path:
    rows = np.column_stack([trace.times, trace.intensity, trace.alpha])
    return write_csv(path, TRACE_COLUMNS, rows)


def read_trace(path) -> TransmissionTrace:
    cols = read_csv(path)
    missing = [c for c in ("time_s", "intensity") if c not in cols]
    if missing:
        raise ValueError(f"trace CSV lacks columns {missing}")
    alpha = cols.get("alpha")
    if alpha is None:
        alpha = np.full_like(cols["intensity"], np.nan)
    return TransmissionTrace(cols["time_s"], cols["intensity"], alpha)


def write_snapshot(path, delta, m) -> Path:
    """Point cloud on the sphere: detuning in Hz and the three components."""
    m = np.asarray(m, dtype=float)
    rows = np.column_stack([ordinary(np.asarray(delta, dtype=float)), m])
    return write_csv(path, SNAPSHOT_COLUMNS, rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
