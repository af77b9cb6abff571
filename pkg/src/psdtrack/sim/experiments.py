"""Static and dynamic accuracy experiments on simulated sessions."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..calibration.alignment import CalibrationResult
from ..errors import GeometryWarning, NoDataError
from ..fusion import RigConfig, Tracker
from ..geometry import Rotation, quat_conjugate, quat_multiply
from ..multiplex import FrameDecoder
from ..psd_optics import StereoRig
from .model import SimRig
from .noise import NoiseModel, fingerprint
from .simulator import SimOutput, simulate
from .trajectory import FRAME_US, SPEEDS, WORKSPACES, TrajectorySpec

__all__ = [
    "ErrorStats",
    "error_stats",
    "ExperimentReport",
    "run_pipeline",
    "run_static_eval",
    "run_dynamic_eval",
    "REPORT_SCHEMA_VERSION",
]

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ErrorStats:
    rms: float
    mean: float
    ci95: float
    n: int

    def to_dict(self) -> dict:
        return {"rms": self.rms, "mean": self.mean, "ci95": self.ci95, "n": self.n}


def error_stats(errors) -> ErrorStats:
    """RMS, mean and 95th percentile of error magnitudes.

    Raises:
        NoDataError: ``errors`` is empty.
    """
    e = np.abs(np.asarray(errors, dtype=float).reshape(-1))
    if e.size == 0:
        raise NoDataError("no errors to summarise")
    return ErrorStats(
        rms=float(np.sqrt(np.mean(e**2))),
        mean=float(np.mean(e)),
        ci95=float(np.percentile(e, 95)),
        n=int(e.size),
    )


@dataclass
class ExperimentReport:
    """Rows of (position mm, orientation deg) statistics plus provenance."""

    kind: str  # "static" or "dynamic"
    rows: dict  # row name -> {"position": ErrorStats, "orientation": ErrorStats, ...counts}
    seed: int
    fingerprint: str
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        rows = {}
        for name, r in self.rows.items():
            rows[name] = {k: (v.to_dict() if isinstance(v, ErrorStats) else v) for k, v in r.items()}
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "rows": rows,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        names = list(self.rows)
        head = f"{self.kind} accuracy (seed {self.seed}, config {self.fingerprint})"
        width = max([12] + [len(n) for n in names]) + 2
        lines = [head, "", "".ljust(10) + "".join(n.rjust(width) for n in names)]
        for label, key, unit in (("position", "position", "mm"), ("orientation", "orientation", "deg")):
            for stat in ("rms", "mean", "ci95"):
                cells = []
                for n in names:
                    s = self.rows[n].get(key)
                    cells.append((f"{getattr(s, stat):.3f}" if s is not None else "-").rjust(width))
                lines.append(f"{stat.upper():<5}{unit:<5}" + "".join(cells) + f"   {label}")
        lines.append("N".ljust(10) + "".join(str(self.rows[n]["position"].n).rjust(width) for n in names))
        return "\n".join(lines) + "\n"


# -- pipeline ----------------------------------------------------------------------------


def _rig_config(sim_rig: SimRig, calib: CalibrationResult | None, stereo: StereoRig | None) -> RigConfig:
    stereo = stereo if stereo is not None else sim_rig.stereo
    if calib is None:
        calib = sim_rig.truth_calibration()
    return RigConfig.from_calibration(calib, stereo)


def run_pipeline(out: SimOutput, sim_rig: SimRig, calib=None, stereo=None, *, tolerate_dropouts: bool = True):
    """Decode and track a simulated session.

    Returns ``(poses_by_frame, decoder, tracker)``; ``poses_by_frame`` maps a
    frame index to its :class:`TrackedPose` (stale poses included).  With
    ``tolerate_dropouts`` the decoder does not give up on long stretches
    without a trigger (grid nodes outside the field of view); they are only
    counted.
    """
    cfg = sim_rig.pattern
    if tolerate_dropouts:
        cfg = replace(cfg, max_sync_lost=out.n_frames + 1)
    decoder = FrameDecoder(cfg)
    tracker = Tracker(_rig_config(sim_rig, calib, stereo))
    for r in out.imu:
        tracker.add_imu(r)
    with warnings.catch_warnings():
        # three LEDs are routinely visible on this ring; not worth a warning per frame
        warnings.simplefilter("ignore", GeometryWarning)
        frames = decoder.push(out.edges) + decoder.flush()
    poses = {}
    for f in frames:
        p = tracker.process(f)
        if p is not None:
            poses[int(round((f.t_us - int(out.edge_t[0, 0])) / FRAME_US))] = p
    return poses, decoder, tracker


def _angle_deg(q_est: np.ndarray, q_true: np.ndarray) -> np.ndarray:
    d = quat_multiply(quat_conjugate(q_true), q_est)
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(d[..., 1:], axis=-1), np.abs(d[..., 0])))


def _docs(sim_rig: SimRig, noise: NoiseModel, extra: dict) -> dict:
    return {"rig": sim_rig.to_dict(), "noise": noise.to_dict(), **extra}


# -- static ------------------------------------------------------------------------------


def _static_row(preset: str, sim_rig, noise, seed, calib, stereo, step, dwell, per_node) -> dict:
    spec = TrajectorySpec(
        kind="static_grid", workspace=preset, step=step, dwell_frames=dwell, samples_per_node=per_node
    )
    out = simulate(spec, sim_rig, noise, seed)
    poses, decoder, tracker = run_pipeline(out, sim_rig, calib, stereo)
    traj = out.trajectory
    est, node_of, ang = [], [], []
    for node, frame in zip(traj.sample_nodes, traj.sample_frames):
        p = poses.get(int(frame))
        if p is None or p.stale:
            continue
        est.append(p.Q)
        node_of.append(node)
        k = int(np.argmin(np.abs(out.edge_t[frame] - p.t_us)))
        ang.append(_angle_deg(p.b_r_o.quat, out.truth_quat[frame, k]))
    est, node_of = np.asarray(est).reshape(-1, 3), np.asarray(node_of, dtype=int)
    true = traj.nodes[node_of]
    i, j = np.triu_indices(len(est), k=1)
    keep = node_of[i] != node_of[j]  # distances between distinct grid nodes only
    i, j = i[keep], j[keep]
    d_est = np.linalg.norm(est[i] - est[j], axis=1)
    d_true = np.linalg.norm(true[i] - true[j], axis=1)
    return {
        "position": error_stats(d_est - d_true),
        "orientation": error_stats(ang),
        "samples": int(len(est)),
        "nodes_scored": int(len(np.unique(node_of))),
        "nodes": int(len(traj.nodes)),
        "frames_sync_lost": decoder.frames_sync_lost,
        "no_fix": tracker.no_fix,
    }


def run_static_eval(
    presets=("large", "large_narrow", "sweet_spot"),
    sim_rig: SimRig | None = None,
    calib: CalibrationResult | None = None,
    noise: NoiseModel | None = None,
    seed: int = 0,
    *,
    stereo: StereoRig | None = None,
    step: float = 100.0,
    dwell_frames: int = 15,
    samples_per_node: int = 5,
) -> ExperimentReport:
    """Grid sweep over each workspace; pairwise-distance and orientation errors.

    Each node contributes ``samples_per_node`` consecutive frames from the
    settled end of its dwell.  Position error is ``|d_est - d_true|`` over
    all pairs of samples taken at different nodes.  Without
    ``calib``/``stereo`` the tracker is given the simulator's true values.
    """
    from .model import default_sim_rig

    sim_rig = sim_rig or default_sim_rig()
    noise = noise or NoiseModel()
    presets = [presets] if isinstance(presets, str) else list(presets)
    for p in presets:
        if p not in WORKSPACES:
            raise ValueError(f"unknown workspace preset {p!r}")
    rows = {
        p: _static_row(p, sim_rig, noise, seed, calib, stereo, step, dwell_frames, samples_per_node) for p in presets
    }
    cfg = {"presets": presets, "step": step, "dwell_frames": dwell_frames, "samples_per_node": samples_per_node}
    return ExperimentReport("static", rows, seed, fingerprint(_docs(sim_rig, noise, cfg)), cfg)


# -- dynamic -----------------------------------------------------------------------------


def _dynamic_row(speed: str, sim_rig, noise, seed, calib, stereo, cycles, depth) -> dict:
    spec = TrajectorySpec.sway_preset(speed, cycles=cycles, depth=depth)
    out = simulate(spec, sim_rig, noise, seed)
    poses, decoder, tracker = run_pipeline(out, sim_rig, calib, stereo)
    pos, ang = [], []
    stale = 0
    for frame in out.trajectory.sample_frames:
        p = poses.get(int(frame))
        if p is None or p.stale:
            stale += 1
            continue
        # the pivot estimate blends LEDs seen at different slot times; compare
        # against the same blend of the true pivot
        q_true, _ = out.truth_at(np.array(p.led_times))
        pos.append(np.linalg.norm(p.Q - np.asarray(p.weights) @ q_true))
        _, r_true = out.truth_at(np.array([p.t_us]))
        ang.append(_angle_deg(p.b_r_o.quat, r_true[0]))
    return {
        "position": error_stats(pos),
        "orientation": error_stats(ang),
        "frames": int(len(out.trajectory.sample_frames)),
        "stale": stale,
        "frames_sync_lost": decoder.frames_sync_lost,
    }


def run_dynamic_eval(
    speeds=("slow", "moderate", "fast"),
    sim_rig: SimRig | None = None,
    calib: CalibrationResult | None = None,
    noise: NoiseModel | None = None,
    seed: int = 0,
    *,
    stereo: StereoRig | None = None,
    cycles: int = 3,
    depth: float = 1000.0,
) -> ExperimentReport:
    """Sway at each speed preset; per-frame pivot and orientation errors after settling."""
    from .model import default_sim_rig

    sim_rig = sim_rig or default_sim_rig()
    noise = noise or NoiseModel()
    speeds = [speeds] if isinstance(speeds, str) else list(speeds)
    for s in speeds:
        if s not in SPEEDS:
            raise ValueError(f"unknown speed preset {s!r}")
    rows = {s: _dynamic_row(s, sim_rig, noise, seed, calib, stereo, cycles, depth) for s in speeds}
    cfg = {"speeds": speeds, "cycles": cycles, "depth": depth}
    return ExperimentReport("dynamic", rows, seed, fingerprint(_docs(sim_rig, noise, cfg)), cfg)
