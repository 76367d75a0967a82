"""On-disk formats: JSON-lines trajectories, JSON checkpoints, CSV tables.

Floats are written with repr precision, so reading back is lossless and
writing the same data twice gives the same bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .decoders import Model
from .softsim import Action, Camera, PartialObservation

TRAJ_KEYS = ("index", "seed", "config_hash", "mesh_id", "version", "pre", "post", "flow",
             "obstacles", "observation", "action", "missed", "settled")


class SchemaError(ValueError):
    """Malformed input file; the message starts with the offending field path."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# -- trajectories ------------------------------------------------------------

def record_to_json(rec, seed, config_hash, mesh_id):
    obs = rec["observation"]
    return {
        "index": int(rec["index"]),
        "seed": int(seed),
        "config_hash": config_hash,
        "mesh_id": mesh_id,
        "version": __version__,
        "pre": np.asarray(rec["pre"]).tolist(),
        "post": np.asarray(rec["post"]).tolist(),
        "flow": np.asarray(rec["flow"]).tolist(),
        "obstacles": np.asarray(rec["obstacles"]).tolist(),
        "observation": {"points": obs.points.tolist(), "vertex_ids": obs.vertex_ids.tolist(),
                        "camera": obs.camera.to_json()},
        "action": rec["action"].to_json(),
        "missed": bool(rec["missed"]),
        "settled": bool(rec["settled"]),
    }


def _array(d, key, where, cols, dtype=np.float64):
    if key not in d:
        raise SchemaError(f"{where}.{key}", "missing")
    try:
        a = np.asarray(d[key], dtype=dtype)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}.{key}", "not a numeric array") from None
    if cols is not None:
        if a.size == 0:
            a = a.reshape(0, cols)
        if a.ndim != 2 or a.shape[1] != cols:
            raise SchemaError(f"{where}.{key}", f"expected rows of {cols} numbers")
    if dtype is np.float64 and not np.all(np.isfinite(a)):
        raise SchemaError(f"{where}.{key}", "non-finite value")
    return a


def record_from_json(d, where="record"):
    if not isinstance(d, dict):
        raise SchemaError(where, "expected an object")
    for key in TRAJ_KEYS:
        if key not in d:
            raise SchemaError(f"{where}.{key}", "missing")
    pre = _array(d, "pre", where, 3)
    post = _array(d, "post", where, 3)
    flow = _array(d, "flow", where, 3)
    if not (len(pre) == len(post) == len(flow)):
        raise SchemaError(f"{where}.post", "pre, post and flow differ in length")
    o = d["observation"]
    if not isinstance(o, dict):
        raise SchemaError(f"{where}.observation", "expected an object")
    pts = _array(o, "points", f"{where}.observation", 3)
    ids = _array(o, "vertex_ids", f"{where}.observation", None, np.int64)
    if "camera" not in o:
        raise SchemaError(f"{where}.observation.camera", "missing")
    try:
        cam = Camera.from_json(o["camera"])
    except TypeError as exc:
        raise SchemaError(f"{where}.observation.camera", str(exc)) from None
    a = d["action"]
    if not isinstance(a, dict):
        raise SchemaError(f"{where}.action", "expected an object")
    for key in ("p_g", "p_r"):
        v = _array(a, key, f"{where}.action", None)
        if v.shape != (3,):
            raise SchemaError(f"{where}.action.{key}", "expected [x, y, z]")
    return {
        "index": int(d["index"]), "seed": int(d["seed"]), "config_hash": str(d["config_hash"]),
        "mesh_id": str(d["mesh_id"]), "version": str(d["version"]),
        "pre": pre, "post": post, "flow": flow,
        "obstacles": _array(d, "obstacles", where, 6),
        "observation": PartialObservation(pts, ids, cam, len(pts) == 0),
        "action": Action.from_json(a),
        "missed": bool(d["missed"]), "settled": bool(d["settled"]),
    }


def write_trajectory(path, records, seed, config_hash, mesh_id):
    lines = [_dumps(record_to_json(r, seed, config_hash, mesh_id)) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_trajectory(path):
    path = Path(path)
    records = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{n}", f"invalid JSON ({exc.msg})") from None
        records.append(record_from_json(d, f"{path}:{n}"))
    return records


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model, path):
    payload = {"version": __version__, "config_hash": model.meta.get("config_hash", ""),
               "model": model.to_json()}
    Path(path).write_text(_dumps(payload) + "\n")


def load_checkpoint(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict) or "model" not in d:
        raise SchemaError(f"{path}.model", "missing")
    try:
        return Model.from_json(d["model"])
    except KeyError as exc:
        raise SchemaError(f"{path}.model.{exc.args[0]}", "missing") from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}.model", str(exc)) from None


# -- tables ------------------------------------------------------------------

def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def csv_text(rows, columns=None):
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=None):
    Path(path).write_text(csv_text(rows, columns))


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
