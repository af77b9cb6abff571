"""JSONL readers and writers for calibration inputs."""

from __future__ import annotations

import json
from collections import defaultdict
from typing import Iterable

import numpy as np

from ..errors import ConfigurationError
from ..geometry import Rotation
from .alignment import LedSampleSet, OrientationSamplePair
from .stereo import GridGeometry, GridObservation

__all__ = [
    "read_jsonl",
    "read_grid_observations",
    "write_grid_observations",
    "read_pivot_samples",
    "write_pivot_samples",
    "read_orientation_pairs",
    "write_orientation_pairs",
]


def read_jsonl(lines: Iterable[str]) -> list[dict]:
    out = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"line {n}: {exc}") from exc
    return out


def _field(rec: dict, key: str, n: int):
    try:
        return rec[key]
    except KeyError:
        raise ConfigurationError(f"record {n} lacks field {key!r}") from None


def _xy(v):
    return None if v is None else (float(v[0]), float(v[1]))


def read_grid_observations(lines: Iterable[str]) -> list[GridObservation]:
    """Records ``{pose, grid: {cols, rows, pitch}, points: [[idx, [x, y] | null, [x, y] | null], ...]}``."""
    obs = []
    for n, rec in enumerate(read_jsonl(lines), 1):
        grid = GridGeometry(**rec.get("grid", {}))
        pts = tuple((int(p[0]), _xy(p[1]), _xy(p[2])) for p in _field(rec, "points", n))
        obs.append(GridObservation(int(_field(rec, "pose", n)), pts, grid))
    return obs


def write_grid_observations(fh, observations: Iterable[GridObservation]) -> None:
    for o in observations:
        g = o.grid
        rec = {
            "pose": o.pose_id,
            "grid": {"cols": g.cols, "rows": g.rows, "pitch": g.pitch},
            "points": [[i, None if l is None else list(l), None if r is None else list(r)] for i, l, r in o.points],
        }
        fh.write(json.dumps(rec) + "\n")


def read_pivot_samples(lines: Iterable[str]) -> list[LedSampleSet]:
    """Records ``{led, P: [x, y, z], q_bRo: [w, x, y, z]}`` grouped into one set per LED."""
    pos, rot = defaultdict(list), defaultdict(list)
    for n, rec in enumerate(read_jsonl(lines), 1):
        led = int(_field(rec, "led", n))
        pos[led].append([float(c) for c in _field(rec, "P", n)])
        rot[led].append(Rotation(_field(rec, "q_bRo", n)))
    if not pos:
        raise ConfigurationError("no pivot samples")
    return [LedSampleSet(led, np.array(pos[led]), tuple(rot[led])) for led in sorted(pos)]


def write_pivot_samples(fh, sets: Iterable[LedSampleSet]) -> None:
    for s in sets:
        for p, r in zip(s.positions, s.orientations):
            fh.write(json.dumps({"led": s.led, "P": [float(c) for c in p], "q_bRo": r.tolist()}) + "\n")


def read_orientation_pairs(lines: Iterable[str]) -> list[OrientationSamplePair]:
    """Records ``{gRo_ref: [w, x, y, z], gR_IMUo: [w, x, y, z]}``."""
    return [
        OrientationSamplePair(Rotation(_field(rec, "gRo_ref", n)), Rotation(_field(rec, "gR_IMUo", n)))
        for n, rec in enumerate(read_jsonl(lines), 1)
    ]


def write_orientation_pairs(fh, pairs: Iterable[OrientationSamplePair]) -> None:
    for p in pairs:
        fh.write(json.dumps({"gRo_ref": p.reference.tolist(), "gR_IMUo": p.measured.tolist()}) + "\n")
