"""Artifact writers and readers.

Floats are written with ``repr`` so tables round-trip exactly and reruns
produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import os
from typing import Iterable, Sequence

import numpy as np

from ..paths import CadlagPath, EventLog, TimeGrid


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_json(path: str, obj) -> None:
    write_text(path, json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def path_csv(path: CadlagPath) -> str:
    """One row per grid point: t, x_1..x_d, jump flag, event kind, angle."""
    d = path.dim
    header = ["t"] + [f"x{i}" for i in range(d)] + ["jump", "kind", "angle"]
    ev = path.events
    rows = []
    for k, t in enumerate(path.grid.times):
        kind = int(ev.kind[k]) if ev is not None else 0
        ang = float(ev.angle[k]) if ev is not None else 0.0
        rows.append([float(t), *map(float, path.values[k]), bool(path.jump_flags[k]), kind, ang])
    meta = {
        "trap": [float(v) for v in path.trap],
        "kill_index": path.kill_index,
        "angle_law": ev.angle_law if ev is not None else None,
        "theta": ev.theta if ev is not None else None,
        "walk_angle": ev.walk_angle if ev is not None else None,
    }
    return "# " + json.dumps(meta, sort_keys=True) + "\n" + table_csv(header, rows)


def read_path_csv(text: str) -> CadlagPath:
    lines = text.splitlines()
    meta = json.loads(lines[0][2:]) if lines and lines[0].startswith("# ") else {}
    body = [ln for ln in lines if not ln.startswith("#")]
    rdr = list(csv.reader(body))
    header, data = rdr[0], np.array(rdr[1:], dtype=float)
    d = sum(h.startswith("x") for h in header)
    grid = TimeGrid(data[:, 0])
    flags = data[:, 1 + d].astype(bool)
    events = None
    if meta.get("angle_law") is not None:
        events = EventLog(data[:, 2 + d].astype(np.int8), data[:, 3 + d], meta["angle_law"],
                          float(meta["theta"]), float(meta["walk_angle"]))
    trap = np.asarray(meta.get("trap", np.zeros(d)), dtype=float)
    return CadlagPath(grid, data[:, 1 : 1 + d], flags, trap, meta.get("kill_index"), events)


def manifest(cfg, command: str, artifacts: dict[str, str], extra: dict | None = None) -> dict:
    """Run manifest: config hash, seeds and content addresses of artifacts."""
    import hashlib

    return {
        "command": command,
        "config_hash": cfg.config_hash,
        "base_seed": cfg.seed,
        "artifacts": {
            name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(artifacts.items())
        },
        **(extra or {}),
    }
