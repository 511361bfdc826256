"""Deterministic JSON/CSV serialization for reports and polylines.

Reports must be byte-identical for identical configs and seeds, so floats
are always rendered with 17 significant digits, keys are sorted, and
timestamps never enter report payloads (they live in a separate meta file).
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = [
    "json_dumps",
    "config_hash",
    "write_report",
    "write_meta",
    "curve_to_csv",
    "grid_to_csv",
    "rates_to_csv",
]


def _normalize(obj):
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_normalize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def _render(obj, indent):
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  "{k}": {_render(v, indent + 2)}' for k, v in sorted(obj.items())
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [f"{pad}  {_render(v, indent + 2)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, float):
        if obj != obj:
            return '"nan"'
        if obj in (float("inf"), float("-inf")):
            return f'"{obj}"'
        return f"{obj:.17g}"
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def json_dumps(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    return _render(_normalize(obj), 0) + "\n"


def config_hash(obj) -> str:
    """Content hash of a resolved configuration."""
    return hashlib.sha256(json_dumps(obj).encode()).hexdigest()


def write_report(out_dir, name, payload) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json_dumps(payload))
    return path


def write_meta(out_dir, extra=None) -> Path:
    """Timestamps and environment notes, kept out of the report proper."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "timestamp_utc": datetime.datetime.now(datetime.timezone.utc)
        .replace(microsecond=0)
        .isoformat(),
        "numpy": np.__version__,
    }
    meta.update(extra or {})
    path = out / "meta.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    return path


def curve_to_csv(path, curve):
    """Polyline export: t is the normalized parameter, s the signed
    arclength from the base point, (u, v) the canonical coordinates."""
    m = curve.vertices.shape[0]
    base = curve.base_index()
    rows = []
    for i in range(m):
        t = i / (m - 1) if m > 1 else 0.0
        s = (i - base) * curve.step
        rows.append([t, s, float(curve.points[i, 0]), float(curve.points[i, 1])])
    return _write_rows(path, ["t", "s", "u", "v"], rows)


def grid_to_csv(path, chart):
    """Chart grid export: one row per node with its parameters."""
    g = chart.G
    pts = chart.manifold_grid()
    rows = []
    for i in range(g + 1):
        for j in range(g + 1):
            rows.append([i / g, j / g, float(pts[i, j, 0]), float(pts[i, j, 1])])
    return _write_rows(path, ["t", "s", "u", "v"], rows)


def rates_to_csv(path, rates):
    rows = [[r.eps, r.delta, r.n, r.count, r.rate] for r in rates]
    return _write_rows(path, ["eps", "delta", "n", "count", "rate"], rows)
