"""Calibrate a simulated rig from scratch, then track with the estimates.

Walks through the three calibration steps in the order a lab would run
them (stereo pair, object IMU, pivot), prints how far each estimate lands
from the simulator's truth, and finishes with a static accuracy run that
uses only the estimated parameters.

    python3 demos/calibrate_then_track.py [seed]
"""

import sys

import numpy as np

from psdtrack.calibration import calibrate_object_imu, calibrate_stereo, pivot_calibrate
from psdtrack.geometry import angular_distance
from psdtrack.sim import NoiseModel, default_sim_rig
from psdtrack.sim.calibdata import grid_observations, orientation_pairs, pivot_sample_sets
from psdtrack.sim.experiments import run_static_eval

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rig = default_sim_rig()
truth = rig.stereo

print("1. stereo pair from 12 views of a planar LED grid (0.005 mm spot noise)")
obs = grid_observations(truth, 12, sigma=0.005, seed=seed)
st = calibrate_stereo(obs, left_net=truth.left.bernstein_coeffs, right_net=truth.right.bernstein_coeffs)
print(f"   focal length L/R  {st.rig.left.focal_length:.4f} / {st.rig.right.focal_length:.4f} mm (true {truth.left.focal_length} / {truth.right.focal_length})")
print(f"   baseline          {st.rig.baseline:.3f} mm (true {truth.baseline:.3f})")
print(f"   reprojection RMS  {st.reprojection_rms:.4f} mm")

print("2. object IMU against a reference orientation, 45 poses, 0.1 deg noise")
obj = calibrate_object_imu(orientation_pairs(rig.imu_object, 45, noise_deg=0.1, seed=seed))
print(f"   IMUoRo error      {angular_distance(obj.rotation, rig.imu_object):.4f} deg")

print("3. pivot calibration, 15 swings per LED, 0.5 mm / 0.05 deg noise")
sets = pivot_sample_sets(rig, 15, pos_noise=0.5, ori_noise_deg=0.05, seed=seed)
calib = pivot_calibrate(sets, imu_object=obj.rotation)
q_true = rig.tou.pivot_offsets()
q_err = max(np.linalg.norm(calib.q[k] - q_true[k]) for k in q_true)
print(f"   converged in {calib.iterations} iterations: {calib.converged}")
print(f"   IMUbRb error      {angular_distance(calib.imu_base, rig.imu_base):.4f} deg")
print(f"   worst |q_i| error {q_err:.3f} mm")

print("4. static accuracy with estimated vs true parameters")
for label, kw in (("truth", {}), ("estimated", dict(calib=calib, stereo=st.rig))):
    rep = run_static_eval(["sweet_spot"], rig, noise=NoiseModel(), seed=seed, **kw)
    row = rep.rows["sweet_spot"]
    print(f"   {label:<9} position RMS {row['position'].rms:.3f} mm, orientation RMS {row['orientation'].rms:.3f} deg")
