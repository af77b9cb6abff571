"""Ground-truth motions: dwell-and-sample grids and trapezoidal sway."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Rotation, quat_multiply, rotvec_to_quat

__all__ = [
    "WorkspacePreset",
    "WORKSPACES",
    "SPEEDS",
    "TrajectorySpec",
    "Trajectory",
    "build_trajectory",
    "grid_nodes",
    "trapezoid_leg",
]

FRAME_US = 10_000


@dataclass(frozen=True)
class WorkspacePreset:
    name: str
    size: tuple  # (width x, height y, depth z) mm
    depth_range: tuple  # (near, far) mm from the base

    def __post_init__(self):
        if min(self.size) <= 0 or not 0 < self.depth_range[0] < self.depth_range[1]:
            raise ValueError(f"bad workspace {self.name}")


WORKSPACES = {
    "large": WorkspacePreset("large", (350.0, 400.0, 900.0), (300.0, 1300.0)),
    "large_narrow": WorkspacePreset("large_narrow", (300.0, 300.0, 900.0), (300.0, 1300.0)),
    "sweet_spot": WorkspacePreset("sweet_spot", (200.0, 300.0, 400.0), (400.0, 900.0)),
}

# (velocity mm/s, acceleration mm/s^2)
SPEEDS = {"slow": (70.0, 200.0), "moderate": (140.0, 500.0), "fast": (250.0, 1000.0)}


@dataclass(frozen=True)
class TrajectorySpec:
    """What the simulated robot does.

    ``static_grid`` visits grid nodes of ``workspace`` (or explicit
    ``points``/``orientations``) and dwells ``dwell_frames`` at each.
    ``sway`` moves back and forth over ``translation_range`` along x while
    turning over ``rotation_range`` about ``sway_axis`` (object frame; the
    default tilts the tool sideways like a pendulum), ``cycles`` times.
    """

    kind: str = "static_grid"
    workspace: str = "sweet_spot"
    step: float = 100.0
    dwell_frames: int = 15
    samples_per_node: int = 1
    yaw_jitter_deg: float = 30.0
    tilt_jitter_deg: float = 10.0
    points: tuple = ()
    orientations: tuple = ()  # quaternions (w, x, y, z) of bRo, one per point
    translation_range: float = 75.0
    rotation_range: float = 20.0
    sway_axis: tuple = (1.0, 0.0, 0.0)
    velocity: float = 70.0
    acceleration: float = 200.0
    cycles: int = 3
    depth: float = 1000.0
    settle_s: float = 0.5

    def __post_init__(self):
        if self.kind not in ("static_grid", "sway"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        axis = np.asarray(self.sway_axis, dtype=float).reshape(-1)
        if axis.shape != (3,) or not np.linalg.norm(axis) > 0:
            raise ValueError("sway_axis must be a nonzero 3-vector")
        object.__setattr__(self, "sway_axis", tuple(float(a) for a in axis / np.linalg.norm(axis)))
        if self.kind == "sway":
            if not (self.velocity > 0 and self.acceleration > 0):
                raise ValueError("sway needs positive velocity and acceleration")
            if not (self.translation_range > 0 and self.rotation_range >= 0 and self.cycles > 0):
                raise ValueError("sway ranges must be positive")
        elif not self.points and self.workspace not in WORKSPACES:
            raise ValueError(f"unknown workspace {self.workspace!r}")
        if self.step <= 0 or self.dwell_frames < 1:
            raise ValueError("step and dwell must be positive")
        if not 1 <= self.samples_per_node <= self.dwell_frames:
            raise ValueError("samples_per_node must lie in [1, dwell_frames]")

    @classmethod
    def sway_preset(cls, speed: str, **kw) -> "TrajectorySpec":
        v, a = SPEEDS[speed]
        return cls(kind="sway", velocity=v, acceleration=a, **kw)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["points"] = [list(map(float, p)) for p in self.points]
        d["orientations"] = [list(map(float, q)) for q in self.orientations]
        d["sway_axis"] = list(self.sway_axis)
        return d


def grid_nodes(preset: WorkspacePreset, step: float, center_x: float, center_y: float) -> np.ndarray:
    """Nodes every ``step`` mm, centred on the box, depth as the slowest axis."""

    def axis(size, center):
        n = int(np.floor(size / step + 1e-9)) + 1
        return center + step * (np.arange(n) - (n - 1) / 2)

    zc = 0.5 * (preset.depth_range[0] + preset.depth_range[1])
    xs, ys, zs = axis(preset.size[0], center_x), axis(preset.size[1], center_y), axis(preset.size[2], zc)
    z, y, x = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def trapezoid_leg(distance: float, v: float, a: float):
    """Duration and position function of a rest-to-rest move."""
    if v * v / a >= distance:
        ta = np.sqrt(distance / a)
        v = a * ta
        tc = 0.0
    else:
        ta = v / a
        tc = (distance - v * ta) / v
    total = 2 * ta + tc

    def s(t):
        t = np.clip(t, 0.0, total)
        acc = 0.5 * a * t**2
        cruise = 0.5 * a * ta**2 + v * (t - ta)
        td = total - t
        dec = distance - 0.5 * a * td**2
        return np.where(t < ta, acc, np.where(t < ta + tc, cruise, dec))

    return total, s


@dataclass
class Trajectory:
    n_frames: int
    pose_at: object  # callable: t_us array -> (Q (N, 3), quat (N, 4))
    sample_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    sample_nodes: np.ndarray | None = None  # static grids: node index of each sample frame
    first_scored_frame: int = 0
    nodes: np.ndarray | None = None


def build_trajectory(spec: TrajectorySpec, upright: Rotation, center_x: float, ring_height: float, seed: int) -> Trajectory:
    rng = np.random.default_rng([seed, 101])
    base_q = upright.quat
    if spec.kind == "static_grid":
        if spec.points:
            nodes = np.asarray(spec.points, dtype=float).reshape(-1, 3)
            if spec.orientations:
                quats = np.asarray(spec.orientations, dtype=float).reshape(-1, 4)
                if len(quats) != len(nodes):
                    raise ValueError("need one orientation per point")
            else:
                quats = np.repeat(base_q[None, :], len(nodes), axis=0)
        else:
            nodes = grid_nodes(WORKSPACES[spec.workspace], spec.step, center_x, ring_height)
            yaw = np.radians(rng.uniform(-spec.yaw_jitter_deg, spec.yaw_jitter_deg, len(nodes)))
            tilt = np.radians(rng.uniform(-spec.tilt_jitter_deg, spec.tilt_jitter_deg, (len(nodes), 2)))
            rz = rotvec_to_quat(np.stack([np.zeros_like(yaw), np.zeros_like(yaw), yaw], axis=1))
            rxy = rotvec_to_quat(np.concatenate([tilt, np.zeros((len(nodes), 1))], axis=1))
            quats = quat_multiply(quat_multiply(base_q, rz), rxy)
        dwell = spec.dwell_frames
        n_frames = dwell * len(nodes)

        def pose_at(t_us):
            k = np.clip(np.asarray(t_us) // (dwell * FRAME_US), 0, len(nodes) - 1).astype(int)
            return nodes[k], quats[k]

        # score each node late in its dwell but clear of the jump to the next
        # node, which an IMU reading matched across the boundary would see
        guard = 2 if dwell > 4 else 0
        last = max(dwell - 1 - guard, dwell // 2)
        per = max(1, min(spec.samples_per_node, last + 1))
        offsets = last - np.arange(per)[::-1]
        samples = (dwell * np.arange(len(nodes))[:, None] + offsets[None, :]).ravel()
        owner = np.repeat(np.arange(len(nodes)), per)
        return Trajectory(n_frames, pose_at, sample_frames=samples, sample_nodes=owner, first_scored_frame=0, nodes=nodes)

    leg_t, leg_s = trapezoid_leg(spec.translation_range, spec.velocity, spec.acceleration)
    cycle = 2 * leg_t
    total = spec.settle_s + spec.cycles * cycle
    n_frames = int(np.ceil(total * 1e6 / FRAME_US))
    start = np.array([center_x - 0.5 * spec.translation_range, ring_height, spec.depth])
    rot_per_mm = np.radians(spec.rotation_range) / spec.translation_range
    axis = np.asarray(spec.sway_axis)

    def pose_at(t_us):
        t = np.asarray(t_us, dtype=float) * 1e-6 - spec.settle_s
        tc = np.mod(np.maximum(t, 0.0), cycle)
        done = t >= spec.cycles * cycle
        s = np.where(tc < leg_t, leg_s(tc), spec.translation_range - leg_s(tc - leg_t))
        s = np.where(done | (t < 0), 0.0, s)
        q_pos = start + s[..., None] * np.array([1.0, 0.0, 0.0])
        ang = rot_per_mm * s - 0.5 * np.radians(spec.rotation_range)
        turn = rotvec_to_quat(ang[..., None] * axis)
        return q_pos, quat_multiply(base_q, turn)

    first = int(np.ceil(spec.settle_s * 1e6 / FRAME_US))
    return Trajectory(n_frames, pose_at, sample_frames=np.arange(first, n_frames), first_scored_frame=first)
