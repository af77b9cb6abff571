"""Synthetic calibration data generated from a known rig."""

from __future__ import annotations

import numpy as np

from ..calibration.alignment import LedSampleSet, OrientationSamplePair
from ..calibration.stereo import GridGeometry, GridObservation
from ..geometry import Rotation
from ..psd_optics import StereoRig, distort_points, pinhole
from .model import UPRIGHT, SimRig

__all__ = ["grid_observations", "orientation_pairs", "pivot_sample_sets", "random_rotation_within"]


def random_rotation_within(rng, max_deg: float) -> Rotation:
    """Rotation about a uniformly random axis by an angle uniform in ``[0, max_deg]``."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(np.radians(rng.uniform(0.0, max_deg)) * axis)


def _jitter(rng, sigma_deg: float) -> Rotation:
    if sigma_deg <= 0:
        return Rotation.identity()
    return Rotation.from_rotvec(np.radians(sigma_deg) * rng.standard_normal(3))


def grid_observations(
    stereo: StereoRig,
    n_poses: int = 10,
    *,
    sigma: float = 0.0,
    seed: int = 0,
    grid: GridGeometry | None = None,
    depth=(600.0, 1000.0),
    tilt_deg: float = 30.0,
) -> list[GridObservation]:
    """Grid poses in front of the rig, projected through its intrinsics and nets.

    ``sigma`` (mm) is Gaussian noise on every sensor coordinate.  Points that
    fall off a sensor are reported as missing on that side.
    """
    rng = np.random.default_rng([seed, 7])
    grid = grid or GridGeometry()
    mid = 0.5 * stereo.extrinsics.translation
    half = 0.5 * stereo.left.resistance_length
    out = []
    for k in range(n_poses):
        r = (
            Rotation.about_x(rng.uniform(-tilt_deg, tilt_deg))
            @ Rotation.about_y(rng.uniform(-tilt_deg, tilt_deg))
            @ Rotation.about_z(rng.uniform(-20.0, 20.0))
        )
        t = np.array([mid[0] + rng.uniform(-80, 80), mid[1] + rng.uniform(-60, 60), rng.uniform(*depth)])
        pts = r.apply(grid.points()) + t
        sides = []
        for intr, cam in ((stereo.left, pts), (stereo.right, stereo.extrinsics.inv().apply(pts))):
            xy = distort_points(pinhole(cam, intr), intr)
            xy = xy + sigma * rng.standard_normal(xy.shape)
            sides.append([tuple(map(float, p)) if np.all(np.abs(p) <= half) else None for p in xy])
        rows = tuple((i, sides[0][i], sides[1][i]) for i in range(grid.size))
        out.append(GridObservation(k, rows, grid))
    return out


def orientation_pairs(
    imu_object: Rotation, n: int = 45, *, noise_deg: float = 0.0, seed: int = 0
) -> list[OrientationSamplePair]:
    """Reference object attitudes spread over all three axes, with matching IMU readings.

    ``gR_IMUo = gRo @ inv(IMUoRo)``, perturbed by ``noise_deg`` per axis.
    """
    rng = np.random.default_rng([seed, 11])
    pairs = []
    for _ in range(n):
        ref = random_rotation_within(rng, 90.0)
        meas = ref @ imu_object.inv() @ _jitter(rng, noise_deg)
        pairs.append(OrientationSamplePair(ref, meas))
    return pairs


def pivot_sample_sets(
    rig: SimRig,
    n_per_led: int = 15,
    *,
    pivot=None,
    pos_noise: float = 0.0,
    ori_noise_deg: float = 0.0,
    swing_deg: float = 45.0,
    seed: int = 0,
) -> list[LedSampleSet]:
    """Pivot-calibration samples: the tool swings about a fixed pivot.

    For LED ``i`` the tool is first turned so that LED faces the base, then
    swung by up to ``swing_deg`` about a random axis through the pivot.  Each
    sample holds the LED position ``P_i = Q - bRo q_i`` (plus ``pos_noise``)
    and the relative orientation as seen with an identity base alignment,
    ``IMUbRb @ bRo`` (plus ``ori_noise_deg``).
    """
    rng = np.random.default_rng([seed, 13])
    q = rig.tou.pivot_offsets()
    if pivot is None:
        pivot = np.array([rig.midline_x, rig.tou.ring_height, 800.0])
    pivot = np.asarray(pivot, dtype=float)
    sets = []
    for led in sorted(q):
        face = UPRIGHT @ Rotation.about_z(-60.0 * (led - 1))
        pos, rots = [], []
        for _ in range(n_per_led):
            b_r_o = random_rotation_within(rng, swing_deg) @ face
            p = pivot - b_r_o.apply(q[led]) + pos_noise * rng.standard_normal(3)
            pos.append(p)
            rots.append(rig.imu_base @ b_r_o @ _jitter(rng, ori_noise_deg))
        sets.append(LedSampleSet(led, np.array(pos), tuple(rots)))
    return sets
