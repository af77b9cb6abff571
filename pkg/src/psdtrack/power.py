"""Closed-loop LED intensity control.

The host looks up a target sum-current for the current disparity and LED
off-axis angle, compares it with the brighter of the two PSD sums, and sends
a proportional power correction back to the object unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, SparseSweepError
from .geometry import Rotation

__all__ = [
    "LUT_SCHEMA_VERSION",
    "PowerLut",
    "SweepSample",
    "ControllerState",
    "lut_lookup",
    "control_step",
    "build_lut",
    "led_off_axis_angle",
    "PowerLoop",
    "read_sweep_jsonl",
]

LUT_SCHEMA_VERSION = 1
ADC_MAX = 2**15 - 1


@dataclass(frozen=True)
class PowerLut:
    """Target sums on a (disparity, angle) grid.

    ``disparity`` is stored descending, i.e. by increasing depth, and
    ``targets[i, j]`` belongs to ``(disparity[i], angle[j])``.
    """

    disparity: np.ndarray
    angle: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.disparity, dtype=float).reshape(-1)
        a = np.asarray(self.angle, dtype=float).reshape(-1)
        t = np.asarray(self.targets, dtype=float)
        if d.size == 0 or a.size == 0:
            raise ConfigurationError("empty look-up table")
        if t.shape != (d.size, a.size):
            raise ConfigurationError(f"targets shape {t.shape} does not match grid ({d.size}, {a.size})")
        if d.size > 1 and not np.all(np.diff(d) < 0):
            raise ConfigurationError("disparity grid must be strictly descending")
        if a.size > 1 and not np.all(np.diff(a) > 0):
            raise ConfigurationError("angle grid must be strictly ascending")
        if not np.all(t > 0) or np.any(t > ADC_MAX):
            raise ConfigurationError("targets must be positive and within the ADC range")
        for name, v in (("disparity", d), ("angle", a), ("targets", t)):
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    def to_dict(self) -> dict:
        return {
            "schema_version": LUT_SCHEMA_VERSION,
            "disparity_mm": self.disparity.tolist(),
            "angle_deg": self.angle.tolist(),
            "targets": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PowerLut":
        if d.get("schema_version") != LUT_SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported LUT schema_version {d.get('schema_version')!r}")
        return cls(np.asarray(d["disparity_mm"]), np.asarray(d["angle_deg"]), np.asarray(d["targets"]))


def _axis_weights(grid: np.ndarray, x: float):
    """Lower index and fraction on an ascending grid, clamped to its ends."""
    if grid.size == 1:
        return 0, 0.0
    x = min(max(x, grid[0]), grid[-1])
    i = int(np.clip(np.searchsorted(grid, x, side="right") - 1, 0, grid.size - 2))
    return i, (x - grid[i]) / (grid[i + 1] - grid[i])


def lut_lookup(lut: PowerLut, d: float, angle: float) -> float:
    """Bilinear target at disparity ``d`` (mm) and off-axis ``angle`` (deg)."""
    if lut is None or lut.targets.size == 0:
        raise ConfigurationError("empty look-up table")
    if not (np.isfinite(d) and np.isfinite(angle)):
        raise ValueError("disparity and angle must be finite")
    # flip to an ascending disparity axis for the search
    dg = lut.disparity[::-1]
    t = lut.targets[::-1]
    i, fu = _axis_weights(dg, float(d))
    j, fv = _axis_weights(lut.angle, float(angle))
    i1 = min(i + 1, dg.size - 1)
    j1 = min(j + 1, lut.angle.size - 1)
    return float(
        (1 - fu) * (1 - fv) * t[i, j] + fu * (1 - fv) * t[i1, j] + (1 - fu) * fv * t[i, j1] + fu * fv * t[i1, j1]
    )


@dataclass(frozen=True)
class ControllerState:
    error: float = 0.0
    power: float = 0.5
    saturated_high: bool = False
    saturated_low: bool = False

    def __post_init__(self):
        if not 0.0 <= self.power <= 1.0:
            raise ValueError("commanded power must lie in [0, 1]")


def control_step(state: ControllerState, sum_l: float, sum_r: float, target: float, kp: float = 1e-4) -> ControllerState:
    """One proportional update: ``power += kp * (target - max(sum_l, sum_r))``."""
    error = float(target) - max(float(sum_l), float(sum_r))
    raw = state.power + kp * error
    power = min(max(raw, 0.0), 1.0)
    return ControllerState(error=error, power=power, saturated_high=raw >= 1.0 and error > 0, saturated_low=raw <= 0.0 and error < 0)


# -- LUT construction ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepSample:
    disparity: float  # mm
    angle: float  # deg
    target: float  # counts


def _bin_nodes(values: np.ndarray, edges):
    if edges is None:
        nodes = np.unique(values)
        return nodes, np.searchsorted(nodes, values)
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2 or not np.all(np.diff(edges) > 0):
        raise ConfigurationError("bin edges must be ascending with at least two entries")
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, edges.size - 2)
    return 0.5 * (edges[:-1] + edges[1:]), idx


def build_lut(sweep: Iterable, disparity_edges=None, angle_edges=None) -> PowerLut:
    """Bin sweep samples into a table; each cell keeps its largest target.

    Without explicit bin edges every distinct disparity and angle becomes a
    grid node.  Targets are then forced nondecreasing with depth by a running
    maximum from the nearest row outwards.

    Raises:
        SparseSweepError: some cell received no sample.
    """
    rows = [s if isinstance(s, SweepSample) else SweepSample(*s) for s in sweep]
    if not rows:
        raise ConfigurationError("empty sweep")
    d = np.array([r.disparity for r in rows], dtype=float)
    a = np.array([r.angle for r in rows], dtype=float)
    t = np.array([r.target for r in rows], dtype=float)
    d_nodes, di = _bin_nodes(d, disparity_edges)
    a_nodes, ai = _bin_nodes(a, angle_edges)
    table = np.full((d_nodes.size, a_nodes.size), -np.inf)
    np.maximum.at(table, (di, ai), t)
    empty = np.argwhere(~np.isfinite(table))
    if len(empty):
        raise SparseSweepError([(float(d_nodes[i]), float(a_nodes[j])) for i, j in empty])
    # descending disparity = increasing depth; isotonic step by running max
    order = np.argsort(-d_nodes)
    table = np.maximum.accumulate(table[order], axis=0)
    return PowerLut(d_nodes[order], a_nodes, table)


def read_sweep_jsonl(lines: Iterable[str]) -> list[SweepSample]:
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            out.append(SweepSample(float(rec["d"]), float(rec["angle"]), float(rec["target"])))
        except KeyError as exc:
            raise ConfigurationError(f"sweep line {n} lacks field {exc}") from None
    return out


def led_off_axis_angle(b_r_o: Rotation, boresight_obj, led_base) -> float:
    """Angle (deg) between an LED's boresight and its line of sight to the base origin.

    ``boresight_obj`` is the LED direction in the object frame, ``led_base``
    its position P_i in the base frame.
    """
    axis = b_r_o.apply(np.asarray(boresight_obj, dtype=float))
    to_base = -np.asarray(led_base, dtype=float)
    c = axis @ to_base / (np.linalg.norm(axis) * np.linalg.norm(to_base))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass
class PowerLoop:
    """Controller plus a fixed command latency, stepped once per frame.

    The command computed after frame ``n`` takes effect at frame
    ``n + 1 + latency_frames``.
    """

    lut: PowerLut
    kp: float = 1e-4
    latency_frames: int = 0
    state: ControllerState = field(default_factory=ControllerState)
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self._queue = [self.state.power] * (self.latency_frames + 1)
        self._frame = 0

    @property
    def applied_power(self) -> float:
        return self._queue[0]

    def step(self, sum_l: float, sum_r: float, d: float | None, angle: float | None) -> float:
        """Feed one frame's measurement (``d is None`` when nothing was seen).

        Returns the power applied to the next frame.
        """
        if d is None:
            # nothing seen: keep the command, nothing to regulate against
            self.state = replace(self.state, error=0.0)
        else:
            target = lut_lookup(self.lut, d, angle)
            self.state = control_step(self.state, sum_l, sum_r, target, self.kp)
        self.trace.append({"frame": self._frame, "error": self.state.error, "power": self.state.power})
        self._frame += 1
        self._queue.append(self.state.power)
        self._queue.pop(0)
        return self._queue[0]
