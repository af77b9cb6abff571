import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psdtrack.calibration import fit_distortion
from psdtrack.errors import BehindSensorError, DegenerateGeometryError, InsufficientDataError, NoSignalError, OutOfRangeError
from psdtrack.geometry import RigidTransform, Rotation
from psdtrack.psd_optics import (
    PsdCurrents,
    PsdIntrinsics,
    StereoRig,
    currents_to_position,
    disparity,
    distort_points,
    identity_net,
    position_to_currents,
    project,
    project_points,
    triangulate,
    undistort,
    undistort_points,
)

on_sensor = st.tuples(st.floats(-4.5, 4.5), st.floats(-4.5, 4.5))
positive = st.floats(1e-3, 1e6)


def parallel_rig(baseline=200.0):
    return StereoRig(PsdIntrinsics(), PsdIntrinsics(), RigidTransform(Rotation.identity(), np.array([baseline, 0.0, 0.0])))


def toed_rig():
    left = PsdIntrinsics(focal_length=8.5, principal_point=(0.05, -0.03))
    right = PsdIntrinsics(focal_length=8.45, principal_point=(-0.02, 0.04), skew=0.001)
    ext = RigidTransform(Rotation.about_y(-4.0) @ Rotation.about_x(0.5), np.array([150.0, 1.0, -2.0]))
    return StereoRig(left, right, ext)


# -- signal model ---------------------------------------------------------------


def test_symmetric_illumination_is_centre():
    assert currents_to_position(PsdCurrents(1, 1, 1, 1)) == (0.0, 0.0)


def test_edge_illumination():
    p = currents_to_position(PsdCurrents(0, 1, 1, 0), 9.0)
    assert p.x == pytest.approx(4.5) and p.y == pytest.approx(0.0)


def test_zero_current_is_no_signal():
    with pytest.raises(NoSignalError):
        currents_to_position(PsdCurrents(0, 0, 0, 0))


def test_negative_current_rejected():
    with pytest.raises(ValueError):
        PsdCurrents(-1, 0, 0, 0)


def test_centre_splits_evenly():
    c = position_to_currents((0.0, 0.0), 4.0)
    assert (c.i1, c.i2, c.i3, c.i4) == (1.0, 1.0, 1.0, 1.0)


def test_off_sensor_point_rejected():
    with pytest.raises(OutOfRangeError):
        position_to_currents((4.6, 0.0), 1.0)


@given(on_sensor, positive)
def test_currents_round_trip(p, total):
    back = currents_to_position(position_to_currents(p, total))
    assert abs(back.x - p[0]) <= 1e-12 and abs(back.y - p[1]) <= 1e-12


@given(on_sensor, positive, st.sampled_from([2.0, 0.5, 3.0, 1024.0]))
def test_scale_invariance(p, total, k):
    c = position_to_currents(p, total)
    assert currents_to_position(c.scaled(k)) == pytest.approx(currents_to_position(c), abs=1e-12)


def test_doubling_total_is_exact():
    c = PsdCurrents(0.3, 1.7, 2.2, 0.9)
    assert currents_to_position(c.scaled(2.0)) == currents_to_position(c)


# -- distortion -----------------------------------------------------------------


@given(on_sensor)
def test_identity_net_reproduces_points(p):
    intr = PsdIntrinsics(bernstein_coeffs=identity_net(3))
    q = undistort(p, intr)
    assert abs(q.x - p[0]) <= 1e-12 and abs(q.y - p[1]) <= 1e-12


def test_zero_degree_one_net_maps_to_origin(rng):
    intr = PsdIntrinsics(bernstein_coeffs=np.zeros((2, 2, 2)))
    out, _ = undistort_points(rng.uniform(-4.5, 4.5, (50, 2)), intr)
    assert np.all(out == 0)


def test_extrapolation_is_flagged():
    _, inside = undistort_points(np.array([[0.0, 0.0], [5.0, 0.0]]), PsdIntrinsics())
    assert inside.tolist() == [True, False]


def _pincushion(xy, k=5e-4):
    return xy * (1 + k * np.sum(xy**2, axis=1, keepdims=True))


def test_pincushion_fit_then_undistort(rng):
    ideal = rng.uniform(-4.3, 4.3, (200, 2))
    fit = fit_distortion(ideal, _pincushion(ideal), degree=3)
    assert fit.rms <= 1e-3
    grid = np.stack(np.meshgrid(np.linspace(-4, 4, 9), np.linspace(-4, 4, 9)), -1).reshape(-1, 2)
    out, _ = undistort_points(_pincushion(grid), PsdIntrinsics(bernstein_coeffs=fit.coeffs))
    assert np.max(np.abs(out - grid)) < 1e-3


def test_fit_identity_when_measured_equals_ideal(rng):
    pts = rng.uniform(-4.5, 4.5, (60, 2))
    fit = fit_distortion(pts, pts, 3)
    assert fit.rms < 1e-12
    assert np.allclose(fit.coeffs, identity_net(3), atol=1e-10)


def test_fit_degree_zero_is_centroid(rng):
    ideal = rng.uniform(-4, 4, (40, 2))
    fit = fit_distortion(ideal, _pincushion(ideal), degree=0)
    expect = math.sqrt(np.mean(np.sum((ideal - ideal.mean(axis=0)) ** 2, axis=1)))
    assert fit.rms == pytest.approx(expect, rel=1e-12)


def test_fit_underdetermined():
    pts = np.zeros((5, 2))
    with pytest.raises(InsufficientDataError):
        fit_distortion(pts, pts, 3)
    with pytest.raises(InsufficientDataError):
        fit_distortion(np.zeros((20, 2)), np.zeros((20, 2)), 3)


def test_distort_inverts_undistort(rng):
    ideal = rng.uniform(-4, 4, (100, 2))
    fit = fit_distortion(ideal, _pincushion(ideal), 3)
    intr = PsdIntrinsics(bernstein_coeffs=fit.coeffs)
    back, _ = undistort_points(distort_points(ideal, intr), intr)
    assert np.max(np.abs(back - ideal)) < 1e-12


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        PsdIntrinsics(focal_length=0)
    with pytest.raises(ValueError):
        PsdIntrinsics(bernstein_coeffs=np.zeros((3, 4, 2)))


def test_intrinsics_dict_round_trip():
    intr = PsdIntrinsics(focal_length=8.4, principal_point=(0.1, -0.2), skew=0.01)
    back = PsdIntrinsics.from_dict(intr.to_dict())
    assert back.to_dict() == intr.to_dict()


def test_stereo_rig_dict_round_trip_and_version():
    rig = toed_rig()
    d = rig.to_dict()
    assert StereoRig.from_dict(d).to_dict() == d
    d["schema_version"] = 99
    with pytest.raises(ValueError):
        StereoRig.from_dict(d)


# -- projection and triangulation ---------------------------------------------------


@pytest.mark.parametrize("z", [300.0, 850.0, 4000.0])
def test_optical_axis_hits_principal_point(z):
    intr = PsdIntrinsics(principal_point=(0.2, -0.1))
    assert project((0.0, 0.0, z), intr, distort=False) == pytest.approx((0.2, -0.1), abs=1e-15)


def test_similar_triangles():
    assert project((100.0, 0.0, 850.0), PsdIntrinsics(), distort=False).x == pytest.approx(1.0, abs=1e-15)


def test_field_of_view_half_angle():
    half = math.degrees(math.atan(4.5 / 8.5))
    assert half == pytest.approx(27.9, abs=0.05)
    z = 1000.0
    edge = project((z * math.tan(math.radians(half)), 0.0, z), PsdIntrinsics(), distort=False)
    assert edge.x == pytest.approx(4.5, abs=1e-12)


def test_behind_sensor_projection():
    with pytest.raises(BehindSensorError):
        project((0.0, 0.0, -1.0), PsdIntrinsics())


def test_triangulate_reference_point():
    rig = toed_rig()
    p = np.array([-52.59, 108.10, 780.70])
    xl = project_points(p, rig.left, distort=False)[0]
    xr = project_points(p, rig.right, rig.extrinsics, distort=False)[0]
    assert np.max(np.abs(triangulate(xl, xr, rig) - p)) < 1e-9


def test_disparity_formula_on_left_axis():
    rig = parallel_rig(200.0)
    for z in (400.0, 780.0, 1300.0):
        p = np.array([0.0, 0.0, z])
        xl = project(p, rig.left, distort=False)
        xr = project(p, rig.right, rig.extrinsics, distort=False)
        assert disparity(xl, xr) == pytest.approx(8.5 * 200.0 / z, abs=1e-9)
        assert np.allclose(triangulate(xl, xr, rig), p, atol=1e-9)


def test_swapped_inputs_fail():
    rig = parallel_rig()
    p = np.array([10.0, 5.0, 800.0])
    xl = project(p, rig.left, distort=False)
    xr = project(p, rig.right, rig.extrinsics, distort=False)
    with pytest.raises((BehindSensorError, DegenerateGeometryError)):
        triangulate(xr, xl, rig)


def test_parallel_rays_are_degenerate():
    rig = parallel_rig()
    with pytest.raises(DegenerateGeometryError):
        triangulate((0.0, 0.0), (0.0, 0.0), rig)


def test_disparity_examples():
    assert disparity((1.0, 0.3), (0.4, -2.0)) == pytest.approx(0.6)
    assert disparity((1.0, 0.0), (1.0, 5.0)) == 0.0


def test_disparity_decreases_with_depth():
    rig = toed_rig()
    zs = np.linspace(300, 1400, 23)
    d = []
    for z in zs:
        p = np.array([75.0, 20.0, z])
        d.append(disparity(project(p, rig.left, distort=False), project(p, rig.right, rig.extrinsics, distort=False)))
    assert np.all(np.diff(d) < 0)


@given(
    st.floats(-150, 300),
    st.floats(-150, 150),
    st.floats(300, 2000),
)
def test_project_triangulate_round_trip(x, y, z):
    rig = toed_rig()
    p = np.array([x, y, z])
    xl = project_points(p, rig.left, distort=False)[0]
    xr = project_points(p, rig.right, rig.extrinsics, distort=False)[0]
    assert np.allclose(triangulate(xl, xr, rig), p, atol=1e-6 * z)
