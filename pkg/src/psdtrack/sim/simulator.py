"""Forward model from a robot trajectory to raw ADC edges and IMU readings.

Per frame the simulator evaluates the pose at every slot edge, places each
LED in both PSD frames, and derives its spot (pinhole, then the truth lens)
and its sum current (inverse square, Lambertian lobe cut at the beam
half-angle, PSD incidence cosine, LED brightness).  The brightness follows the
power loop, which is the only sequential part; everything else is
vectorised over the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyVisibilityError
from ..fusion import ImuReading
from ..geometry import Rotation, quat_conjugate, quat_multiply, quat_to_matrix, rotvec_to_quat
from ..multiplex import EdgeBlock, records_from_edges
from ..power import ControllerState, PowerLoop, PowerLut, SweepSample, build_lut
from ..psd_optics import distort_points
from .model import SimRig
from .noise import NoiseModel
from .trajectory import FRAME_US, Trajectory, TrajectorySpec, build_trajectory

__all__ = ["SimOutput", "simulate", "model_sweep", "model_lut", "brightness"]

N_LEDS = 6


def brightness(power, dynamic_range: float):
    """LED output relative to full drive; logarithmic in the commanded power."""
    return np.exp(np.log(dynamic_range) * (np.asarray(power, dtype=float) - 1.0))


@dataclass
class SimOutput:
    edges: EdgeBlock
    imu: list  # ImuReading, time ordered
    edge_t: np.ndarray  # (F, 7) us
    truth_Q: np.ndarray  # (F, 7, 3) pivot at every edge
    truth_quat: np.ndarray  # (F, 7, 4) bRo at every edge
    lit: np.ndarray  # (F, 6) LED k produced signal above threshold on some PSD in its slot
    power: np.ndarray  # (F,) applied power
    control: dict  # per-frame arrays: target, measured, error
    trajectory: Trajectory
    power_trace: list = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.edge_t)

    @property
    def frame_t(self) -> np.ndarray:
        return self.edge_t[:, 0]

    def truth_at(self, t_us):
        """Ground truth at edge timestamps (exact lookups)."""
        flat = self.edge_t.ravel()
        idx = np.searchsorted(flat, np.asarray(t_us))
        idx = np.clip(idx, 0, len(flat) - 1)
        if not np.all(flat[idx] == np.asarray(t_us)):
            raise KeyError("ground truth is only kept at ADC edge times")
        return self.truth_Q.reshape(-1, 3)[idx], self.truth_quat.reshape(-1, 4)[idx]

    def raw_lines(self):
        """JSONL lines of the raw stream: ADC records and IMU records merged by time."""
        imu = iter(self.imu)
        nxt = next(imu, None)
        for r in records_from_edges(self.edges):
            while nxt is not None and nxt.t_us <= r.t_us:
                yield json.dumps(nxt.to_dict())
                nxt = next(imu, None)
            yield json.dumps({"t_us": r.t_us, "channel": r.channel, "first": r.first, "second": r.second})
        while nxt is not None:
            yield json.dumps(nxt.to_dict())
            nxt = next(imu, None)

    def truth_lines(self):
        for n in range(self.n_frames):
            for k in range(7):
                yield json.dumps(
                    {
                        "t_us": int(self.edge_t[n, k]),
                        "Q": [float(c) for c in self.truth_Q[n, k]],
                        "q_bRo": [float(c) for c in self.truth_quat[n, k]],
                    }
                )


# -- geometry -----------------------------------------------------------------------


def _psd_view(points, boresights, rig: SimRig, noise: NoiseModel, side: int):
    """Spot positions and unit-brightness sums of LEDs seen by one PSD.

    ``points``/``boresights`` are ``(..., 3)`` in the left-PSD frame.
    Returns ``(xy (..., 2), amplitude (...), cos_offaxis (...))``; amplitude
    is zero for LEDs the PSD cannot see.
    """
    stereo = rig.stereo
    if side == 0:
        intr, origin, rot = stereo.left, np.zeros(3), np.eye(3)
    else:
        intr, origin, rot = stereo.right, stereo.extrinsics.translation, stereo.extrinsics.rotation.matrix
    rel = points - origin
    cam = rel @ rot  # rot.T @ rel, row-wise
    dist = np.linalg.norm(rel, axis=-1)
    cos_off = -np.einsum("...i,...i->...", boresights, rel) / dist
    lobe_ok = cos_off >= np.cos(np.radians(noise.beam_half_angle_deg))
    z = cam[..., 2]
    front = z > 1e-6
    zs = np.where(front, z, 1.0)
    f = intr.focal_length
    cx, cy = intr.principal_point
    ideal = np.stack([f * (cam[..., 0] + intr.skew * cam[..., 1]) / zs + cx, f * cam[..., 1] / zs + cy], axis=-1)
    half = 0.5 * intr.resistance_length
    # only bother distorting spots that can land on the sensor
    cand = front & lobe_ok & np.all(np.abs(ideal) < 1.2 * half, axis=-1)
    xy = np.full(ideal.shape, np.nan)
    if np.any(cand):
        if noise.lens == "exact":
            xy[cand] = distort_points(ideal[cand], intr)
        else:
            xy[cand] = rig.lenses[side].distort(ideal[cand])
    on = cand & np.all(np.abs(np.nan_to_num(xy, nan=np.inf)) <= half, axis=-1)
    cos_inc = z / dist
    amp = np.where(on, noise.light_constant * cos_off * cos_inc / np.where(on, dist**2, 1.0), 0.0)
    return xy, amp, cos_off


def _bilinear_weights(xy, length):
    """Electrode shares (I1, I2, I3, I4) of a unit current at ``xy``."""
    u = np.clip(xy[..., 0] / length + 0.5, 0.0, 1.0)
    v = np.clip(xy[..., 1] / length + 0.5, 0.0, 1.0)
    return np.stack([(1 - u) * (1 - v), u * v, u * (1 - v), (1 - u) * v], axis=-1)


# -- power look-up table from the light model ---------------------------------------


def model_sweep(rig: SimRig, noise: NoiseModel, depths=None, angles=None) -> list:
    """Sweep samples (disparity, off-axis angle, target) from the light model.

    The target is the sum needed for a fixed lateral precision (linear in
    depth), limited to a fraction of what the LED can deliver at that
    distance and angle, and to the ADC headroom.
    """
    depths = np.arange(300.0, 1401.0, 100.0) if depths is None else np.asarray(depths, float)
    angles = np.arange(0.0, 61.0, 10.0) if angles is None else np.asarray(angles, float)
    ps = rig.power
    out = []
    for z in depths:
        p = np.array([[rig.midline_x, 0.0, z]])
        facing = np.array([[0.0, 0.0, -1.0]])
        xl, _, _ = _psd_view(p, facing, rig, noise, 0)
        xr, _, _ = _psd_view(p, facing, rig, noise, 1)
        d = float(xl[0, 0] - xr[0, 0])
        dist = float(np.linalg.norm(p))
        for a in angles:
            full = noise.light_constant * np.cos(np.radians(a)) * (z / dist) / dist**2
            target = min(ps.target_at_1m * z / 1000.0, ps.cap_fraction * full, ps.adc_cap)
            out.append(SweepSample(d, float(a), float(target)))
    return out


def model_lut(rig: SimRig, noise: NoiseModel) -> PowerLut:
    return build_lut(model_sweep(rig, noise))


# -- main entry -----------------------------------------------------------------------


def simulate(
    traj: TrajectorySpec | Trajectory,
    rig: SimRig,
    noise: NoiseModel,
    seed: int,
    *,
    lut: PowerLut | None = None,
    dark_frames=None,
    ambient_override=None,
) -> SimOutput:
    """Run the forward model.

    Args:
        traj: what the object does.
        rig: physical truth.
        noise: noise and lens settings.
        seed: seeds every random draw; equal inputs give identical output.
        lut: power look-up table (default: :func:`model_lut`).
        dark_frames: frame indices during which every LED is forced off.
        ambient_override: callable ``t_us -> sum-channel ambient counts``
            replacing the noise model's ambient profile.

    Raises:
        EmptyVisibilityError: no LED is ever visible to either PSD.
    """
    ss = np.random.SeedSequence(int(seed))
    rng_adc, rng_imu = (np.random.default_rng(s) for s in ss.spawn(2))
    pat = rig.pattern
    if isinstance(traj, TrajectorySpec):
        traj = build_trajectory(traj, _upright(), rig.midline_x, rig.tou.ring_height, int(seed))
    F = traj.n_frames
    offsets = np.rint(np.arange(7) * pat.slot_width_us).astype(np.int64)
    frame_t = np.arange(F, dtype=np.int64) * FRAME_US
    edge_t = frame_t[:, None] + offsets[None, :]

    # truth at the stamped time, geometry possibly delayed
    t_flat = edge_t.ravel()
    truth_Q, truth_quat = traj.pose_at(t_flat)
    geo_t = np.maximum(t_flat - noise.psd_latency_frames * FRAME_US, 0)
    geo_Q, geo_quat = traj.pose_at(geo_t) if noise.psd_latency_frames else (truth_Q, truth_quat)
    rmat = quat_to_matrix(geo_quat)  # (E, 3, 3)
    leds = geo_Q[:, None, :] + np.einsum("eij,kj->eki", rmat, rig.tou.led_positions)
    bores = np.einsum("eij,kj->eki", rmat, rig.tou.boresights)

    xy = [None, None]
    amp = [None, None]
    cos_off_left = None
    for side in (0, 1):
        xy[side], amp[side], c = _psd_view(leds, bores, rig, noise, side)
        if side == 0:
            cos_off_left = c
    if not (np.any(amp[0] > 0) or np.any(amp[1] > 0)):
        raise EmptyVisibilityError("no LED is visible to either PSD during the whole trajectory")
    E = F * 7
    xy = [a.reshape(F, 7, N_LEDS, 2) for a in xy]
    amp = [a.reshape(F, 7, N_LEDS) for a in amp]
    cos_off_left = cos_off_left.reshape(F, 7, N_LEDS)

    # -- power loop (sequential) ---------------------------------------------
    lut = lut if lut is not None else model_lut(rig, noise)
    slot = np.arange(1, 7)
    own_l = amp[0][:, slot, slot - 1]  # (F, 6): LED k in its own slot
    own_r = amp[1][:, slot, slot - 1]
    both = (own_l > 0) & (own_r > 0)
    unit = np.where(both, np.maximum(own_l, own_r), 0.0)
    best = np.argmax(unit, axis=1)
    has = both[np.arange(F), best]
    rows = np.arange(F)
    d_feat = xy[0][rows, best + 1, best, 0] - xy[1][rows, best + 1, best, 0]
    ang_feat = np.degrees(np.arccos(np.clip(cos_off_left[rows, best + 1, best], -1, 1)))
    dark = np.zeros(F, bool)
    if dark_frames is not None:
        dark[np.asarray(dark_frames, dtype=int)] = True

    ps = rig.power
    loop = PowerLoop(lut, kp=ps.kp, latency_frames=ps.latency_frames, state=ControllerState(power=ps.initial_power))
    dr = noise.drive_dynamic_range
    applied = np.empty(F)
    target = np.full(F, np.nan)
    measured = np.full(F, np.nan)
    errors = np.zeros(F)
    p = loop.applied_power
    for n in range(F):
        applied[n] = p
        b = 0.0 if dark[n] else float(brightness(p, dr))
        if has[n] and not dark[n]:
            s = unit[n, best[n]] * b
            measured[n] = s
            p = loop.step(s, s, float(d_feat[n]), float(ang_feat[n]))
            target[n] = loop.state.error + s
        else:
            p = loop.step(0.0, 0.0, None, None)
        errors[n] = loop.state.error
    bright = np.where(dark, 0.0, brightness(applied, dr))  # (F,)

    # -- electrode currents ----------------------------------------------------
    lit = np.zeros((7, N_LEDS), bool)
    lit[0, :] = True
    lit[slot, slot - 1] = True
    chans_first, chans_second = [], []
    trig = np.zeros(7, bool)
    trig[0] = True
    for side in (0, 1):
        length = rig.stereo.left.resistance_length if side == 0 else rig.stereo.right.resistance_length
        total = amp[side] * lit[None] * bright[:, None, None]  # (F, 7, 6)
        w = _bilinear_weights(np.nan_to_num(xy[side]), length)  # (F, 7, 6, 4)
        cur = np.einsum("fek,fekj->fej", total, w)  # (F, 7, 4)
        for read in (0, 1):
            c = cur if read == 0 else cur * trig[None, :, None]
            if noise.current_noise > 0:
                c = c * (1.0 + noise.current_noise * rng_adc.standard_normal(c.shape))
            i1, i2, i3, i4 = np.moveaxis(c, -1, 0)
            ch = np.stack([i2 + i3 - i1 - i4, i2 + i4 - i1 - i3, i1 + i2 + i3 + i4], axis=-1)
            (chans_first if read == 0 else chans_second).append(ch)
    first = np.concatenate(chans_first, axis=-1)  # (F, 7, 6)
    second = np.concatenate(chans_second, axis=-1)

    # ambient light, same on both PSDs
    for read, arr in ((0, first), (1, second)):
        t = edge_t + (0 if read == 0 else int(round(pat.double_read_interval_us)))
        if ambient_override is not None:
            a = np.asarray(ambient_override(t), dtype=float)
        else:
            ts = t * 1e-6
            a = noise.ambient_lux * noise.counts_per_lux * (
                1.0 + noise.ambient_flicker * np.sin(2 * np.pi * noise.ambient_flicker_hz * ts)
            ) + noise.ambient_ramp * ts
        cx, cy = noise.ambient_centroid
        arr += np.stack([cx * a, cy * a, a, cx * a, cy * a, a], axis=-1)
    if noise.read_noise > 0:
        first += noise.read_noise * rng_adc.standard_normal(first.shape)
        second += noise.read_noise * rng_adc.standard_normal(second.shape)
    if noise.quantize:
        half = 2 ** (noise.adc_bits - 1)
        first = np.clip(np.rint(first), -half, half - 1).astype(np.int64)
        second = np.clip(np.rint(second), -half, half - 1).astype(np.int64)
    edges = EdgeBlock(t_flat.copy(), first.reshape(E, 6), second.reshape(E, 6))

    lit_truth = (np.maximum(own_l, own_r) * bright[:, None]) > pat.threshold

    imu = _imu_stream(traj, rig, noise, edge_t, rng_imu)
    return SimOutput(
        edges=edges,
        imu=imu,
        edge_t=edge_t,
        truth_Q=truth_Q.reshape(F, 7, 3),
        truth_quat=truth_quat.reshape(F, 7, 4),
        lit=lit_truth,
        power=applied,
        control={"target": target, "measured": measured, "error": errors},
        trajectory=traj,
        power_trace=loop.trace,
    )


def _upright():
    from .model import UPRIGHT

    return UPRIGHT


def _angular_speed_deg(traj: Trajectory, t_us: np.ndarray, h_us: int = 500) -> np.ndarray:
    """Object angular speed (deg/s) by central differences of the true attitude."""
    _, qa = traj.pose_at(np.maximum(t_us - h_us, 0))
    _, qb = traj.pose_at(t_us + h_us)
    d = quat_multiply(quat_conjugate(qa), qb)
    ang = 2.0 * np.arctan2(np.linalg.norm(d[:, 1:], axis=1), np.abs(d[:, 0]))
    span = (t_us + h_us - np.maximum(t_us - h_us, 0)) * 1e-6
    return np.degrees(ang) / span


def _imu_stream(traj: Trajectory, rig: SimRig, noise: NoiseModel, edge_t: np.ndarray, rng) -> list:
    """Object and base IMU readings, interleaved and time ordered."""
    end = int(edge_t[-1, -1])
    per_source = []
    for source in ("object", "base"):
        if noise.imu_rate_hz is None:
            t = edge_t.ravel().copy()
        else:
            rate = noise.imu_rate_hz * (1.0 + rng.uniform(-noise.imu_clock_error, noise.imu_clock_error))
            period = 1e6 / rate
            phase = rng.uniform(0.0, period)
            t = np.rint(phase + period * np.arange(int(end / period) + 2)).astype(np.int64)
        src_t = np.maximum(t - noise.imu_latency_frames * FRAME_US, 0)
        if source == "object":
            _, b_q_o = traj.pose_at(src_t)
            g_q = quat_multiply(rig.base_in_world.quat, b_q_o)
            q = quat_multiply(g_q, quat_conjugate(rig.imu_object.quat))
        else:
            g_q = rig.base_in_world.quat
            q = np.repeat(quat_multiply(g_q, quat_conjugate(rig.imu_base.quat))[None, :], len(t), axis=0)
        if noise.imu_bias_drift_deg_per_min > 0:
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            rate = np.radians(noise.imu_bias_drift_deg_per_min) / 60e6  # rad per us
            q = quat_multiply(q, rotvec_to_quat(axis[None, :] * (rate * t)[:, None]))
        sigma = np.full(len(t), noise.imu_noise_deg)
        if source == "object" and noise.imu_dynamic_noise > 0:
            sigma = sigma + noise.imu_dynamic_noise * _angular_speed_deg(traj, src_t)
        if np.any(sigma > 0):
            jitter = np.radians(sigma)[:, None] * rng.standard_normal((len(t), 3))
            q = quat_multiply(q, rotvec_to_quat(jitter))
        per_source.append((t, source, q))
    readings = []
    for t, source, q in per_source:
        readings.extend(ImuReading(int(ti), source, Rotation(qi)) for ti, qi in zip(t.tolist(), q))
    readings.sort(key=lambda r: (r.t_us, r.source != "object"))
    return readings
