"""Per-frame 6-DoF pose from stereo LED positions and the two IMUs.

Orientation chain::

    gRo = gR_IMUo @ IMUoRo          (object)
    gRb = gR_IMUb @ IMUbRb          (base)
    bRo = inv(gRb) @ gRo

and each visible LED i gives a pivot estimate ``Q_i = bRo q_i + P_i``.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .calibration.alignment import CalibrationResult
from .errors import NoFixError, StaleOrientationError
from .geometry import Rotation, vec3
from .multiplex import DecodedFrame
from .psd_optics import StereoRig, channels_to_position, triangulate_points, undistort_points

__all__ = [
    "ImuReading",
    "RigConfig",
    "TrackedPose",
    "object_orientation",
    "base_orientation",
    "relative_orientation",
    "pivot_position",
    "fuse_frame",
    "ImuBuffer",
    "Tracker",
    "DEFAULT_IMU_WINDOW_US",
    "write_poses_jsonl",
]

DEFAULT_IMU_WINDOW_US = 15_000
DEFAULT_MIN_SUM = 15.0  # counts; the decoder's default detection threshold


@dataclass(frozen=True)
class ImuReading:
    t_us: int
    source: str  # "object" or "base"
    orientation: Rotation  # gR_IMUo or gR_IMUb

    def __post_init__(self):
        if self.source not in ("object", "base"):
            raise ValueError(f"IMU source must be 'object' or 'base', got {self.source!r}")

    def to_dict(self) -> dict:
        return {"t_us": self.t_us, "imu": self.source, "q": self.orientation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ImuReading":
        return cls(int(d["t_us"]), d["imu"], Rotation(d["q"]))


@dataclass(frozen=True)
class RigConfig:
    imu_object: Rotation  # IMUoRo
    imu_base: Rotation  # IMUbRb
    q: Mapping  # led (1..6) -> pivot offset in the object frame, mm
    stereo: StereoRig

    def __post_init__(self):
        q = {int(k): vec3(v) for k, v in self.q.items()}
        if sorted(q) != [1, 2, 3, 4, 5, 6]:
            raise ValueError(f"need pivot offsets for LEDs 1..6, got {sorted(q)}")
        object.__setattr__(self, "q", q)

    @classmethod
    def from_calibration(cls, calib: CalibrationResult, stereo: StereoRig) -> "RigConfig":
        return cls(calib.imu_object, calib.imu_base, calib.q, stereo)


@dataclass(frozen=True)
class TrackedPose:
    t_us: int
    Q: np.ndarray  # pivot, base frame, mm
    b_r_o: Rotation
    leds: tuple = ()
    stale: bool = False
    weights: tuple = ()  # per contributing LED, same order as ``leds``
    led_times: tuple = ()

    def to_dict(self) -> dict:
        return {
            "t_us": int(self.t_us),
            "Q": [float(c) for c in self.Q],
            "q_bRo": self.b_r_o.tolist(),
            "leds": list(self.leds),
            "stale": bool(self.stale),
        }


def object_orientation(g_r_imu_o: Rotation, imu_o_r_o: Rotation) -> Rotation:
    return g_r_imu_o @ imu_o_r_o


def base_orientation(g_r_imu_b: Rotation, imu_b_r_b: Rotation) -> Rotation:
    return g_r_imu_b @ imu_b_r_b


def relative_orientation(g_r_b: Rotation, g_r_o: Rotation) -> Rotation:
    return g_r_b.inv() @ g_r_o


def pivot_position(b_r_o: Rotation, q_i, p_i) -> np.ndarray:
    return b_r_o.apply(vec3(q_i)) + vec3(p_i)


def _check_fresh(reading: ImuReading, t_us: int, window_us: float):
    if abs(reading.t_us - t_us) > window_us:
        raise StaleOrientationError(
            f"{reading.source} IMU reading at {reading.t_us} us is {abs(reading.t_us - t_us)} us from t={t_us} us"
        )


def _orientation(imu_o: ImuReading, imu_b: ImuReading, rig: RigConfig) -> Rotation:
    return relative_orientation(
        base_orientation(imu_b.orientation, rig.imu_base), object_orientation(imu_o.orientation, rig.imu_object)
    )


def fuse_frame(
    decoded: DecodedFrame,
    imu_o: ImuReading,
    imu_b: ImuReading,
    rig: RigConfig,
    *,
    window_us: float = DEFAULT_IMU_WINDOW_US,
    led_imu: Mapping | None = None,
    min_sum: float = DEFAULT_MIN_SUM,
) -> TrackedPose:
    """Fuse one decoded frame into a pivot pose.

    Every LED whose cancelled sum exceeds ``min_sum`` on both PSDs is undistorted, triangulated and carried to
    the pivot.  Two estimates are merged by a sum-current weighted mean.  The
    pose is stamped with the time of the strongest LED and its orientation
    comes from ``imu_o``/``imu_b``.  ``led_imu`` may map an LED to its own
    ``(imu_o, imu_b)`` pair, matched to that LED's slot time.

    Raises:
        NoFixError: no LED could be triangulated.
        StaleOrientationError: an IMU reading lies outside ``window_us``.
    """
    stereo = rig.stereo
    leds = [k for k, (lt, rt) in sorted(decoded.leds.items()) if lt.sum > min_sum and rt.sum > min_sum]
    if not leds:
        raise NoFixError(f"no LED seen by both PSDs in frame at t={decoded.t_us} us")
    trip_l = np.array([decoded.leds[k][0].tolist() for k in leds])
    trip_r = np.array([decoded.leds[k][1].tolist() for k in leds])
    xl = channels_to_position(trip_l[:, 0], trip_l[:, 1], trip_l[:, 2], stereo.left.resistance_length)
    xr = channels_to_position(trip_r[:, 0], trip_r[:, 1], trip_r[:, 2], stereo.right.resistance_length)
    xl, _ = undistort_points(np.stack(xl, axis=1), stereo.left)
    xr, _ = undistort_points(np.stack(xr, axis=1), stereo.right)
    pts, s, u = triangulate_points(xl, xr, stereo)
    ok = np.isfinite(s) & (s > 0) & (u > 0)
    if not np.any(ok):
        raise NoFixError(f"no valid triangulation in frame at t={decoded.t_us} us")
    weights = np.maximum(trip_l[:, 2], trip_r[:, 2])[ok]
    used = [k for k, good in zip(leds, ok) if good]
    pts = pts[ok]
    times = [int(decoded.led_times.get(k, decoded.t_us)) for k in used]
    lead = int(np.argmax(weights))
    t_pose = times[lead]

    _check_fresh(imu_o, t_pose, window_us)
    _check_fresh(imu_b, t_pose, window_us)
    b_r_o = _orientation(imu_o, imu_b, rig)

    q_est = np.empty((len(used), 3))
    for n, (k, t) in enumerate(zip(used, times)):
        rot = b_r_o
        if led_imu is not None and k in led_imu:
            io, ib = led_imu[k]
            _check_fresh(io, t, window_us)
            _check_fresh(ib, t, window_us)
            rot = _orientation(io, ib, rig)
        q_est[n] = rot.apply(rig.q[k]) + pts[n]
    w = weights / weights.sum()
    return TrackedPose(
        t_us=t_pose,
        Q=w @ q_est,
        b_r_o=b_r_o,
        leds=tuple(used),
        stale=False,
        weights=tuple(float(v) for v in w),
        led_times=tuple(times),
    )


class ImuBuffer:
    """Time-sorted readings of one IMU with nearest-neighbour lookup."""

    def __init__(self):
        self._t: list[int] = []
        self._r: list[ImuReading] = []

    def __len__(self):
        return len(self._t)

    def add(self, reading: ImuReading):
        if self._t and reading.t_us < self._t[-1]:
            raise ValueError(f"{reading.source} IMU timestamps must be nondecreasing")
        self._t.append(reading.t_us)
        self._r.append(reading)

    def nearest(self, t_us: int) -> ImuReading | None:
        if not self._t:
            return None
        i = bisect.bisect_left(self._t, t_us)
        if i == 0:
            return self._r[0]
        if i == len(self._t):
            return self._r[-1]
        before, after = self._t[i - 1], self._t[i]
        return self._r[i] if after - t_us < t_us - before else self._r[i - 1]


@dataclass
class Tracker:
    """Stream-level fusion: IMU matching and hold-last-pose on dropouts.

    Frames that give no fix, or whose IMU data is stale, reproduce the last
    good pose with ``stale=True`` (nothing is emitted before the first fix).
    """

    rig: RigConfig
    window_us: float = DEFAULT_IMU_WINDOW_US
    min_sum: float = DEFAULT_MIN_SUM
    imu_object: ImuBuffer = field(default_factory=ImuBuffer)
    imu_base: ImuBuffer = field(default_factory=ImuBuffer)
    last: TrackedPose | None = None
    no_fix: int = 0
    stale_imu: int = 0

    def add_imu(self, reading: ImuReading):
        (self.imu_object if reading.source == "object" else self.imu_base).add(reading)

    def add_imu_records(self, records: Iterable[dict]):
        for r in records:
            if "imu" in r:
                self.add_imu(ImuReading.from_dict(r))

    def _hold(self, frame: DecodedFrame):
        if self.last is None:
            return None
        return replace(self.last, t_us=frame.t_us, stale=True)

    def process(self, frame: DecodedFrame) -> TrackedPose | None:
        led_imu = {}
        for k, t in frame.led_times.items():
            io, ib = self.imu_object.nearest(t), self.imu_base.nearest(t)
            if io is not None and ib is not None:
                led_imu[k] = (io, ib)
        try:
            if not led_imu:
                if not frame.leds:
                    raise NoFixError("empty frame")
                raise StaleOrientationError("no IMU data")
            # the pose orientation comes from the strongest LED's match
            lead = max(led_imu, key=lambda k: max(frame.leds[k][0].sum, frame.leds[k][1].sum))
            io, ib = led_imu[lead]
            pose = fuse_frame(frame, io, ib, self.rig, window_us=self.window_us, led_imu=led_imu, min_sum=self.min_sum)
        except NoFixError:
            self.no_fix += 1
            return self._hold(frame)
        except StaleOrientationError:
            self.stale_imu += 1
            return self._hold(frame)
        self.last = pose
        return pose

    def run(self, frames: Iterable[DecodedFrame]) -> list[TrackedPose]:
        out = []
        for f in frames:
            p = self.process(f)
            if p is not None:
                out.append(p)
        return out


def write_poses_jsonl(fh, poses: Iterable[TrackedPose]) -> None:
    for p in poses:
        fh.write(json.dumps(p.to_dict()) + "\n")
