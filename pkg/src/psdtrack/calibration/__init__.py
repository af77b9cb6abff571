"""Offline solvers: stereo rig, distortion net, IMU alignment and pivot calibration."""

from .alignment import (
    CalibrationResult,
    LedSampleSet,
    ObjectImuCalibration,
    OrientationSamplePair,
    calibrate_object_imu,
    pair_indices,
    pivot_calibrate,
)
from .distortion import DistortionFit, fit_distortion
from .io import (
    read_grid_observations,
    read_orientation_pairs,
    read_pivot_samples,
    write_grid_observations,
    write_orientation_pairs,
    write_pivot_samples,
)
from .stereo import GridGeometry, GridObservation, StereoCalibration, calibrate_stereo, estimate_homography

__all__ = [
    "CalibrationResult",
    "DistortionFit",
    "GridGeometry",
    "GridObservation",
    "LedSampleSet",
    "ObjectImuCalibration",
    "OrientationSamplePair",
    "StereoCalibration",
    "calibrate_object_imu",
    "calibrate_stereo",
    "estimate_homography",
    "fit_distortion",
    "pair_indices",
    "pivot_calibrate",
    "read_grid_observations",
    "read_orientation_pairs",
    "read_pivot_samples",
    "write_grid_observations",
    "write_orientation_pairs",
    "write_pivot_samples",
]
