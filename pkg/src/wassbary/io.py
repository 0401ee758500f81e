"""JSON and CSV formats for measures, maps, traces and result tables.

Measures and maps are JSON objects tagged by ``"type"``. Numbers are
written with ``repr`` so files round-trip exactly and identical runs give
identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .barycenter import DescentConfig, DescentTrace
from .errors import ParseError, WassbaryError
from .estimation import SeparableWarp
from .maps import Assignment, GridMap, LinearMap, Monotone1D, ProductMap, TransportMap
from .measures import (
    Compactum,
    DiscreteMeasure,
    FrankCopula,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    PointPattern,
    ProductMeasure,
)

__all__ = [
    "measure_to_json",
    "measure_from_json",
    "map_to_json",
    "map_from_json",
    "config_from_json",
    "load_json",
    "load_measure",
    "save_json",
    "write_csv",
    "write_trace_csv",
    "write_grid_csv",
    "write_points_csv",
    "read_points_csv",
]


def _arr(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def measure_to_json(m) -> dict:
    if isinstance(m, GaussianMeasure):
        return {"type": "gaussian", "covariance": _arr(m.covariance)}
    if isinstance(m, Measure1D):
        return {"type": "quantile1d", "values": _arr(m.values)}
    if isinstance(m, ProductMeasure):
        out = {"type": "product", "factors": [measure_to_json(f) for f in m.factors]}
        if m.copula is not None:
            out["copula"] = m.copula.to_json()
        return out
    if isinstance(m, DiscreteMeasure):
        return {"type": "discrete", "points": _arr(m.points), "weights": _arr(m.weights)}
    if isinstance(m, GridDensity):
        return {
            "type": "grid",
            "lower": _arr(m.window.lower),
            "upper": _arr(m.window.upper),
            "cells": list(m.cells),
            "values": _arr(np.asarray(m.values).ravel()),
        }
    raise WassbaryError(f"cannot serialise {type(m).__name__}")


def _need(obj: dict, key: str):
    if key not in obj:
        raise ParseError(f"missing field {key!r} in {obj.get('type', 'object')}")
    return obj[key]


def measure_from_json(obj: dict):
    if not isinstance(obj, dict):
        raise ParseError("a measure must be a JSON object")
    kind = _need(obj, "type")
    try:
        if kind == "gaussian":
            return GaussianMeasure(np.array(_need(obj, "covariance"), dtype=float))
        if kind == "quantile1d":
            return Measure1D(np.array(_need(obj, "values"), dtype=float))
        if kind == "product":
            factors = tuple(measure_from_json(f) for f in _need(obj, "factors"))
            cop = obj.get("copula")
            if cop is not None:
                if cop.get("family") != "frank":
                    raise ParseError(f"unknown copula family {cop.get('family')!r}")
                cop = FrankCopula(float(cop["theta"]))
            return ProductMeasure(factors, cop)
        if kind == "discrete":
            pts = np.array(_need(obj, "points"), dtype=float)
            if pts.ndim == 1:
                pts = pts.reshape(-1, 1)
            w = obj.get("weights")
            return DiscreteMeasure(pts, None if w is None else np.array(w, dtype=float))
        if kind == "grid":
            window = Compactum(np.array(_need(obj, "lower")), np.array(_need(obj, "upper")))
            cells = tuple(int(c) for c in _need(obj, "cells"))
            values = np.array(_need(obj, "values"), dtype=float).reshape(cells)
            return GridDensity(window, cells, values)
    except ParseError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ParseError(f"invalid {kind} measure: {exc}") from exc
    raise ParseError(f"unknown measure type {kind!r}")


def map_to_json(t: TransportMap) -> dict:
    if isinstance(t, Monotone1D):
        return {"type": "monotone1d", "knots_x": _arr(t.knots_x), "knots_y": _arr(t.knots_y)}
    if isinstance(t, LinearMap):
        return {"type": "linear", "matrix": _arr(t.matrix)}
    if isinstance(t, ProductMap):
        return {"type": "product", "factors": [map_to_json(f) for f in t.factors]}
    if isinstance(t, Assignment):
        out = {"type": "assignment", "source": _arr(t.source), "target": _arr(t.target)}
        if t.index is not None:
            out["index"] = [int(i) for i in t.index]
        return out
    if isinstance(t, GridMap):
        return {
            "type": "grid",
            "lower": _arr(t.lower),
            "upper": _arr(t.upper),
            "cells": list(t.cells),
            "displacement": _arr(t.displacement),
        }
    if isinstance(t, SeparableWarp):
        return {
            "type": "separable_warp",
            "lower": _arr(t.lower),
            "upper": _arr(t.upper),
            "frequencies": list(t.frequencies),
            "amplitude": float(t.amplitude),
            "inverted": bool(t.inverted),
        }
    raise WassbaryError(f"cannot serialise {type(t).__name__}")


def map_from_json(obj: dict) -> TransportMap:
    kind = _need(obj, "type")
    try:
        if kind == "monotone1d":
            return Monotone1D(np.array(obj["knots_x"]), np.array(obj["knots_y"]))
        if kind == "linear":
            return LinearMap(np.array(obj["matrix"], dtype=float))
        if kind == "product":
            return ProductMap(tuple(map_from_json(f) for f in obj["factors"]))
        if kind == "assignment":
            return Assignment(np.array(obj["source"]), np.array(obj["target"]), obj.get("index"))
        if kind == "grid":
            return GridMap(obj["lower"], obj["upper"], obj["cells"], np.array(obj["displacement"]))
        if kind == "separable_warp":
            return SeparableWarp(
                obj["lower"], obj["upper"], obj["frequencies"], obj["amplitude"], obj["inverted"]
            )
    except (ValueError, TypeError, KeyError) as exc:
        raise ParseError(f"invalid {kind} map: {exc}") from exc
    raise ParseError(f"unknown map type {kind!r}")


_CONFIG_KEYS = {"tolerance", "max_iterations", "step", "threads", "levels", "cap"}


def config_from_json(obj: dict, base: DescentConfig | None = None) -> DescentConfig:
    """Descent settings from a JSON object; ``initial`` may hold a measure."""
    base = base or DescentConfig()
    fields = dict(base.__dict__)
    for key, value in obj.items():
        if key == "initial":
            fields["initial"] = None if value in (None, "use-first-input") else measure_from_json(value)
        elif key in _CONFIG_KEYS:
            fields[key] = value
        else:
            raise ParseError(f"unknown config key {key!r}")
    try:
        return DescentConfig(**fields)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"invalid descent config: {exc}") from exc


def load_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise ParseError("file is not UTF-8 text", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from exc


def load_measure(path):
    try:
        return measure_from_json(load_json(path))
    except ParseError as exc:
        if exc.path is None:
            raise ParseError(str(exc), path) from exc
        raise


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def save_json(path, obj, indent: int | None = None) -> None:
    """Write ``obj`` as JSON; non-finite floats become ``null``."""
    Path(path).write_text(json.dumps(_clean(obj), indent=indent) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    """Rows given as dicts or sequences, in ``columns`` order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in vals])


def write_trace_csv(path, trace: DescentTrace) -> None:
    write_csv(path, ("iteration", "objective", "grad_sq", "delta"), trace.rows)


_AXES = ("x", "y", "z")


def write_grid_csv(path, points, values, value_name: str = "density") -> None:
    """One row per point: coordinates then the value."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    vals = np.asarray(values, dtype=float).reshape(len(pts), -1)
    names = [value_name] if vals.shape[1] == 1 else [f"{value_name}{k}" for k in range(vals.shape[1])]
    cols = list(_AXES[: pts.shape[1]]) + names
    write_csv(path, cols, np.hstack([pts, vals]).tolist())


def write_points_csv(path, points) -> None:
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(len(pts), -1) if pts.size else np.empty((0, 1))
    write_csv(path, _AXES[: pts.shape[1]], pts.tolist())


def read_points_csv(path, window: Compactum) -> PointPattern:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc
    return PointPattern(window, data.reshape(-1, window.dim))
