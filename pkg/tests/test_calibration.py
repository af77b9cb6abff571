import io

import numpy as np
import pytest

from psdtrack.calibration import (
    GridGeometry,
    LedSampleSet,
    OrientationSamplePair,
    calibrate_object_imu,
    calibrate_stereo,
    estimate_homography,
    pivot_calibrate,
    read_grid_observations,
    read_orientation_pairs,
    read_pivot_samples,
    write_grid_observations,
    write_orientation_pairs,
    write_pivot_samples,
)
from psdtrack.calibration.alignment import CalibrationResult
from psdtrack.errors import ConfigurationError, InsufficientDataError, RankDeficiencyError
from psdtrack.geometry import Rotation, angular_distance
from psdtrack.sim.calibdata import grid_observations, orientation_pairs, pivot_sample_sets

PLANTED = Rotation((0.9999, 0.0027, -0.0043, 0.0095))


def rad(a, b):
    return np.radians(angular_distance(a, b))


# -- object IMU ------------------------------------------------------------------------


def test_object_imu_identity_when_readings_match(rng):
    pairs = [OrientationSamplePair(r, r) for r in (Rotation.random(rng) for _ in range(10))]
    assert calibrate_object_imu(pairs).rotation.angle < 1e-12


def test_object_imu_recovers_planted_rotation():
    got = calibrate_object_imu(orientation_pairs(PLANTED, 45, seed=3))
    assert rad(got.rotation, PLANTED) < 1e-9
    assert got.residual < 1e-12


def test_object_imu_noisy_monte_carlo():
    errs = [angular_distance(calibrate_object_imu(orientation_pairs(PLANTED, 45, noise_deg=0.1, seed=s)).rotation, PLANTED) for s in range(100)]
    assert max(errs) < 0.1


def test_object_imu_degenerate_motion():
    r = Rotation.about_x(10)
    pairs = [OrientationSamplePair(r, r)] * 5
    with pytest.raises(RankDeficiencyError):
        calibrate_object_imu(pairs)


def test_object_imu_needs_three_pairs():
    with pytest.raises(InsufficientDataError):
        calibrate_object_imu(orientation_pairs(PLANTED, 2))


# -- pivot ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def pivot_truth():
    from psdtrack.sim import default_sim_rig

    rig = default_sim_rig()
    pivot = np.array([rig.midline_x, rig.tou.ring_height, 800.0])
    return rig, pivot


def test_pivot_noise_free_recovery(pivot_truth):
    rig, pivot = pivot_truth
    res = pivot_calibrate(pivot_sample_sets(rig, 15, pivot=pivot, seed=1), threshold=1e-10, max_iterations=20)
    assert res.converged and res.iterations <= 20
    q = rig.tou.pivot_offsets()
    assert max(np.max(np.abs(res.q[k] - q[k])) for k in q) < 1e-6
    assert rad(res.imu_base, rig.imu_base) < 1e-9
    assert np.max(np.abs(res.pivot - pivot)) < 1e-6


def test_pivot_identity_base_stays_identity(pivot_truth):
    from dataclasses import replace

    rig, pivot = pivot_truth
    rig = replace(rig, imu_base=Rotation.identity())
    res = pivot_calibrate(pivot_sample_sets(rig, 10, pivot=pivot, seed=2), threshold=1e-10)
    assert res.imu_base.angle < 1e-9


def test_pivot_noisy_spread(pivot_truth):
    rig, pivot = pivot_truth
    res = pivot_calibrate(pivot_sample_sets(rig, 15, pivot=pivot, pos_noise=0.5, ori_noise_deg=0.05, seed=4))
    per_led = np.array(list(res.pivot_per_led.values()))
    assert np.all(per_led.std(axis=0) <= 1.5)
    assert angular_distance(res.imu_base, rig.imu_base) < 1.0


def test_pivot_plain_iteration_reaches_same_fixed_point(pivot_truth):
    rig, pivot = pivot_truth
    sets = pivot_sample_sets(rig, 8, pivot=pivot, seed=5)
    fast = pivot_calibrate(sets, threshold=1e-10)
    slow = pivot_calibrate(sets, threshold=1e-10, accelerate=False, max_iterations=5000)
    assert rad(fast.imu_base, slow.imu_base) < 1e-8
    assert fast.iterations < slow.iterations


def test_pivot_rank_error_names_led(pivot_truth):
    rig, pivot = pivot_truth
    sets = pivot_sample_sets(rig, 6, pivot=pivot, seed=6)
    frozen = sets[2]
    sets[2] = LedSampleSet(frozen.led, frozen.positions, (frozen.orientations[0],) * len(frozen))
    with pytest.raises(RankDeficiencyError) as err:
        pivot_calibrate(sets)
    assert err.value.led == frozen.led
    assert f"LED {frozen.led}" in str(err.value)


def test_led_sample_set_needs_four_samples():
    with pytest.raises(InsufficientDataError):
        LedSampleSet(1, np.zeros((3, 3)), (Rotation.identity(),) * 3)
    with pytest.raises(ValueError):
        LedSampleSet(1, np.zeros((5, 3)), (Rotation.identity(),) * 4)


def test_pivot_no_sets():
    with pytest.raises(InsufficientDataError):
        pivot_calibrate([])


def test_calibration_result_round_trip(pivot_truth):
    rig, _ = pivot_truth
    calib = rig.truth_calibration()
    back = CalibrationResult.from_dict(calib.to_dict())
    assert back.to_dict() == calib.to_dict()


# -- stereo ------------------------------------------------------------------------------


def test_homography_exact(rng):
    h = np.array([[1.2, 0.1, 3.0], [-0.05, 0.9, -1.0], [1e-3, -2e-3, 1.0]])
    src = rng.uniform(-100, 100, (12, 2))
    dst_h = np.c_[src, np.ones(12)] @ h.T
    dst = dst_h[:, :2] / dst_h[:, 2:]
    got = estimate_homography(src, dst)
    assert np.allclose(got / got[2, 2], h, atol=1e-9)


def _nets(stereo):
    return {"left_net": stereo.left.bernstein_coeffs, "right_net": stereo.right.bernstein_coeffs}


def test_stereo_noise_free_recovery(sim_rig):
    st = sim_rig.stereo
    cal = calibrate_stereo(grid_observations(st, 10, seed=1), **_nets(st))
    assert abs(cal.rig.left.focal_length - st.left.focal_length) < 1e-6
    assert abs(cal.rig.right.focal_length - st.right.focal_length) < 1e-6
    assert abs(cal.rig.baseline - st.baseline) < 1e-6
    assert cal.reprojection_rms < 1e-9
    assert np.array_equal(cal.rig.left.bernstein_coeffs, st.left.bernstein_coeffs)


def test_stereo_noisy_reprojection(sim_rig):
    st = sim_rig.stereo
    cal = calibrate_stereo(grid_observations(st, 10, sigma=0.005, seed=2), **_nets(st))
    assert cal.reprojection_rms <= 0.01


def test_stereo_single_pose_is_rank_deficient(sim_rig):
    with pytest.raises(RankDeficiencyError):
        calibrate_stereo(grid_observations(sim_rig.stereo, 1, seed=3))


# -- file formats ----------------------------------------------------------------------------


def test_grid_observation_io(sim_rig):
    obs = grid_observations(sim_rig.stereo, 3, seed=4, grid=GridGeometry(5, 4, 40.0))
    buf = io.StringIO()
    write_grid_observations(buf, obs)
    back = read_grid_observations(io.StringIO(buf.getvalue()))
    assert back == obs


def test_pivot_sample_io(sim_rig):
    sets = pivot_sample_sets(sim_rig, 5, seed=1)
    buf = io.StringIO()
    write_pivot_samples(buf, sets)
    back = read_pivot_samples(io.StringIO(buf.getvalue()))
    assert [s.led for s in back] == [s.led for s in sets]
    assert all(np.array_equal(a.positions, b.positions) for a, b in zip(back, sets))
    assert all(a.orientations == b.orientations for a, b in zip(back, sets))


def test_orientation_pair_io():
    pairs = orientation_pairs(PLANTED, 6, noise_deg=0.2, seed=1)
    buf = io.StringIO()
    write_orientation_pairs(buf, pairs)
    assert read_orientation_pairs(io.StringIO(buf.getvalue())) == pairs


@pytest.mark.parametrize("reader", [read_pivot_samples, read_orientation_pairs, read_grid_observations])
def test_readers_reject_bad_input(reader):
    with pytest.raises(ConfigurationError):
        reader(["{not json"])
    with pytest.raises(ConfigurationError):
        reader(['{"unrelated": 1}'])


def test_calibration_result_rejects_bad_documents(pivot_truth):
    rig, _ = pivot_truth
    doc = rig.truth_calibration().to_dict()
    with pytest.raises(ValueError):
        CalibrationResult.from_dict({**doc, "schema_version": 2})
    with pytest.raises(ValueError):
        CalibrationResult.from_dict({**doc, "pivto": [0, 0, 0]})
