import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psdtrack.errors import NoFixError, StaleOrientationError
from psdtrack.fusion import (
    ImuBuffer,
    ImuReading,
    RigConfig,
    Tracker,
    base_orientation,
    fuse_frame,
    object_orientation,
    pivot_position,
    relative_orientation,
    write_poses_jsonl,
)
from psdtrack.geometry import RigidTransform, Rotation, angular_distance
from psdtrack.multiplex import ChannelTriple, DecodedFrame
from psdtrack.psd_optics import PsdIntrinsics, StereoRig, project_points

L = 9.0
IMU_O = Rotation((0.9999, 0.0027, -0.0043, 0.0095))
IMU_B = Rotation((0.9967, -0.0201, -0.0713, -0.0323))
WORLD_B = Rotation.from_rotvec((0.3, -0.2, 1.1))
Q_OFF = {k: np.array([10 * np.cos(np.radians(60 * (k - 1))), 10 * np.sin(np.radians(60 * (k - 1))), -100.0]) for k in range(1, 7)}

quats = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1)


def rig_config():
    stereo = StereoRig(
        PsdIntrinsics(principal_point=(0.02, -0.01)),
        PsdIntrinsics(focal_length=8.45),
        RigidTransform(Rotation.about_y(-3.0), np.array([150.0, 0.0, 0.0])),
    )
    return RigConfig(IMU_O, IMU_B, Q_OFF, stereo)


def triple(xy, total):
    return ChannelTriple(2 * xy[0] / L * total, 2 * xy[1] / L * total, total)


def observe(cfg, Q, b_r_o, leds, sums=None, t0=0):
    """Decoded frame and matching IMU readings for a pivot pose."""
    sums = sums or {k: 5000.0 for k in leds}
    entries, times = {}, {}
    for k in leds:
        p = Q - b_r_o.apply(cfg.q[k])
        xl = project_points(p, cfg.stereo.left)[0]
        xr = project_points(p, cfg.stereo.right, cfg.stereo.extrinsics)[0]
        entries[k] = (triple(xl, sums[k]), triple(xr, 0.9 * sums[k]))
        times[k] = t0 + int(round(k * 10_000 / 7))
    g_r_o = WORLD_B @ b_r_o
    imu_o = ImuReading(t0 + 1000, "object", g_r_o @ IMU_O.inv())
    imu_b = ImuReading(t0 + 1000, "base", WORLD_B @ IMU_B.inv())
    return DecodedFrame(t0, entries, times), imu_o, imu_b


# -- orientation chain -------------------------------------------------------------


def test_object_orientation_examples(rng):
    g = Rotation.random(rng)
    assert object_orientation(g, Rotation.identity()) == g
    assert object_orientation(Rotation.identity(), Rotation.identity()) == Rotation.identity()


@given(quats, quats)
def test_chain_matches_matrix_products(a, b):
    ra, rb = Rotation(a), Rotation(b)
    assert np.allclose(object_orientation(ra, rb).matrix, ra.matrix @ rb.matrix, atol=1e-12)
    assert np.allclose(base_orientation(ra, rb).matrix, ra.matrix @ rb.matrix, atol=1e-12)
    assert np.allclose(relative_orientation(ra, rb).matrix, ra.matrix.T @ rb.matrix, atol=1e-12)


def test_base_orientation_examples(rng):
    g = Rotation.random(rng)
    assert base_orientation(g, Rotation.identity()) == g


def test_relative_orientation_examples(rng):
    g = Rotation.random(rng)
    assert relative_orientation(g, g).angle < 1e-12
    assert relative_orientation(Rotation.identity(), g) == g


def test_chain_recovers_planted_relative(rng):
    b_r_o = Rotation.random(rng)
    g_imu_o = WORLD_B @ b_r_o @ IMU_O.inv()
    g_imu_b = WORLD_B @ IMU_B.inv()
    got = relative_orientation(base_orientation(g_imu_b, IMU_B), object_orientation(g_imu_o, IMU_O))
    assert np.radians(angular_distance(got, b_r_o)) < 1e-9


def test_pivot_position_examples(rng):
    r = Rotation.random(rng)
    p = rng.normal(size=3)
    assert np.array_equal(pivot_position(r, np.zeros(3), p), p)
    assert np.allclose(pivot_position(Rotation.identity(), [1, 2, 3], p), p + [1, 2, 3])


# -- fuse_frame ---------------------------------------------------------------------------


def test_single_led_noise_free():
    cfg = rig_config()
    Q = np.array([60.0, -20.0, 800.0])
    b_r_o = Rotation.about_x(-90) @ Rotation.about_z(25)
    frame, io_, ib = observe(cfg, Q, b_r_o, [3])
    pose = fuse_frame(frame, io_, ib, cfg)
    assert np.max(np.abs(pose.Q - Q)) < 1e-9
    assert np.radians(angular_distance(pose.b_r_o, b_r_o)) < 1e-9
    assert pose.leds == (3,) and not pose.stale and pose.t_us == frame.led_times[3]


def test_two_leds_equal_sums_give_mean():
    cfg = rig_config()
    Q = np.array([40.0, 10.0, 700.0])
    b_r_o = Rotation.about_x(-90)
    frame, io_, ib = observe(cfg, Q, b_r_o, [2, 3])
    # perturb one LED's right image so the two estimates differ
    left, right = frame.leds[3]
    frame.leds[3] = (left, ChannelTriple(right.diff_x + 20.0, right.diff_y, right.sum))
    pose = fuse_frame(frame, io_, ib, cfg)
    single = {k: fuse_frame(DecodedFrame(0, {k: frame.leds[k]}, {k: frame.led_times[k]}), io_, ib, cfg).Q for k in (2, 3)}
    assert np.allclose(pose.Q, 0.5 * (single[2] + single[3]), atol=1e-12)
    assert pose.weights == pytest.approx((0.5, 0.5))


def test_weights_follow_sum_current():
    cfg = rig_config()
    frame, io_, ib = observe(cfg, np.array([0.0, 0.0, 900.0]), Rotation.about_x(-90), [4, 5], sums={4: 3000.0, 5: 1000.0})
    pose = fuse_frame(frame, io_, ib, cfg)
    assert pose.weights == pytest.approx((0.75, 0.25))
    assert pose.t_us == frame.led_times[4]


def test_empty_frame_is_no_fix():
    cfg = rig_config()
    io_ = ImuReading(0, "object", Rotation.identity())
    ib = ImuReading(0, "base", Rotation.identity())
    with pytest.raises(NoFixError):
        fuse_frame(DecodedFrame(0), io_, ib, cfg)


def test_one_sided_led_is_no_fix():
    cfg = rig_config()
    frame, io_, ib = observe(cfg, np.array([0.0, 0.0, 900.0]), Rotation.about_x(-90), [1])
    left, _ = frame.leds[1]
    frame.leds[1] = (left, ChannelTriple(0.0, 0.0, 0.0))
    with pytest.raises(NoFixError):
        fuse_frame(frame, io_, ib, cfg)


def test_stale_imu():
    cfg = rig_config()
    frame, io_, ib = observe(cfg, np.array([0.0, 0.0, 900.0]), Rotation.about_x(-90), [1])
    old = ImuReading(io_.t_us - 100_000, "object", io_.orientation)
    with pytest.raises(StaleOrientationError):
        fuse_frame(frame, old, ib, cfg)


def test_rig_config_needs_all_leds():
    with pytest.raises(ValueError):
        RigConfig(IMU_O, IMU_B, {1: [0, 0, 0]}, rig_config().stereo)


# -- streaming -----------------------------------------------------------------------------


def test_imu_buffer_nearest():
    buf = ImuBuffer()
    assert buf.nearest(5) is None
    for t in (0, 10, 20):
        buf.add(ImuReading(t, "base", Rotation.identity()))
    assert buf.nearest(-5).t_us == 0
    assert buf.nearest(14).t_us == 10
    assert buf.nearest(16).t_us == 20
    assert buf.nearest(99).t_us == 20
    with pytest.raises(ValueError):
        buf.add(ImuReading(5, "base", Rotation.identity()))


def test_imu_source_validated():
    with pytest.raises(ValueError):
        ImuReading(0, "elbow", Rotation.identity())


def test_tracker_holds_last_pose():
    cfg = rig_config()
    tr = Tracker(cfg)
    assert tr.process(DecodedFrame(0)) is None  # nothing before the first fix
    frame, io_, ib = observe(cfg, np.array([10.0, 0.0, 800.0]), Rotation.about_x(-90), [2], t0=10_000)
    tr.add_imu(io_)
    tr.add_imu(ib)
    first = tr.process(frame)
    held = tr.process(DecodedFrame(20_000))
    assert held.stale and held.t_us == 20_000
    assert np.array_equal(held.Q, first.Q)
    assert tr.no_fix == 2


def test_tracker_flags_missing_imu():
    cfg = rig_config()
    tr = Tracker(cfg)
    frame, _, _ = observe(cfg, np.array([10.0, 0.0, 800.0]), Rotation.about_x(-90), [2])
    assert tr.process(frame) is None
    assert tr.stale_imu == 1


def test_tracker_reads_imu_records_and_writes_poses():
    cfg = rig_config()
    frame, io_, ib = observe(cfg, np.array([10.0, 0.0, 800.0]), Rotation.about_x(-90), [2])
    tr = Tracker(cfg)
    tr.add_imu_records([io_.to_dict(), ib.to_dict(), {"t_us": 0, "channel": "left.sum"}])
    poses = tr.run([frame])
    buf = io.StringIO()
    write_poses_jsonl(buf, poses)
    rec = json.loads(buf.getvalue())
    assert rec["leds"] == [2] and rec["stale"] is False and len(rec["q_bRo"]) == 4
