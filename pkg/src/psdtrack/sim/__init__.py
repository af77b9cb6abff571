"""Closed-loop simulator of the tracking head, object unit and IMUs."""

from .model import UPRIGHT, PowerSettings, RadialLens, SimRig, TouGeometry, default_sim_rig
from .noise import NoiseModel, fingerprint
from .simulator import SimOutput, brightness, model_lut, model_sweep, simulate
from .trajectory import SPEEDS, WORKSPACES, Trajectory, TrajectorySpec, build_trajectory, grid_nodes

__all__ = [
    "UPRIGHT",
    "PowerSettings",
    "RadialLens",
    "SimRig",
    "TouGeometry",
    "default_sim_rig",
    "NoiseModel",
    "fingerprint",
    "SimOutput",
    "brightness",
    "model_lut",
    "model_sweep",
    "simulate",
    "SPEEDS",
    "WORKSPACES",
    "Trajectory",
    "TrajectorySpec",
    "build_trajectory",
    "grid_nodes",
]
