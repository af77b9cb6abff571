"""Ground-truth hardware model: stereo head, LED ring, IMU mountings, lens."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..calibration.alignment import CalibrationResult
from ..calibration.distortion import fit_distortion
from ..fusion import RigConfig
from ..geometry import RigidTransform, Rotation
from ..multiplex import PatternConfig
from ..psd_optics import S5991_LENGTH, PsdIntrinsics, StereoRig

__all__ = [
    "SIM_SCHEMA_VERSION",
    "TouGeometry",
    "RadialLens",
    "PowerSettings",
    "SimRig",
    "default_sim_rig",
    "default_lenses",
    "UPRIGHT",
]

SIM_SCHEMA_VERSION = 1
DEFAULT_RIPPLE = 0.01  # mm at the sensor rim

# object x toward the base (-z), object z up (-y in the base frame)
UPRIGHT = Rotation.from_matrix(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]]))


@dataclass(frozen=True)
class TouGeometry:
    """Six LEDs on a ring whose plane is ``ring_height`` above the pivot.

    The object frame has its origin at the pivot and z along the ring axis;
    LED ``k`` sits at azimuth ``(k - 1) * 60 deg`` and points radially out.
    """

    ring_radius: float = 10.0
    ring_height: float = 100.0

    @property
    def azimuths(self) -> np.ndarray:
        return np.radians(60.0 * np.arange(6))

    @property
    def boresights(self) -> np.ndarray:
        a = self.azimuths
        return np.stack([np.cos(a), np.sin(a), np.zeros(6)], axis=1)

    @property
    def led_positions(self) -> np.ndarray:
        b = self.boresights * self.ring_radius
        b[:, 2] = self.ring_height
        return b

    def pivot_offsets(self) -> dict:
        """``q_i``: pivot minus LED position, object frame."""
        return {k + 1: -p for k, p in enumerate(self.led_positions)}


@dataclass(frozen=True)
class RadialLens:
    """Barrel lens term, pincushion sensor term, and a resistive-layer ripple.

    ``x -> x (1 + k * rho^2)`` applied twice, with ``rho`` the radius as a
    fraction of half the sensor side.  The ripple is a fixed sinusoidal
    position error of period ``ripple_period`` whose amplitude grows as
    ``ripple * rho^4``: negligible in the middle of the sensor, a few microns
    near its rim, and too fine-grained for a cubic correction net to absorb.
    """

    barrel: float = -0.015
    pincushion: float = 0.006
    ripple: float = 0.0  # mm at rho = 1
    ripple_period: float = 1.5  # mm
    ripple_phase: tuple = (0.0, 0.0)  # rad, x and y
    length: float = S5991_LENGTH

    def __post_init__(self):
        object.__setattr__(self, "ripple_phase", tuple(float(p) for p in self.ripple_phase))
        if self.ripple < 0 or self.ripple_period <= 0:
            raise ValueError("ripple amplitude must be nonnegative and its period positive")

    def distort(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        h2 = (0.5 * self.length) ** 2
        r2 = np.sum(xy**2, axis=-1, keepdims=True) / h2
        a = xy * (1.0 + self.barrel * r2)
        r2 = np.sum(a**2, axis=-1, keepdims=True) / h2
        out = a * (1.0 + self.pincushion * r2)
        if self.ripple:
            w = 2.0 * np.pi / self.ripple_period
            amp = self.ripple * (np.sum(xy**2, axis=-1, keepdims=True) / h2) ** 2
            out = out + amp * np.sin(w * xy + np.asarray(self.ripple_phase))
        return out

    def fitted_net(self, degree: int = 3, n: int = 25) -> np.ndarray:
        """Inverse-distortion net fitted on an ``n x n`` grid of ideal points.

        Only the smooth part of the lens is fitted.  The grid extends a
        little past the sensor so the fit also covers measured points near
        the edge.
        """
        g = np.linspace(-0.52, 0.52, n) * self.length
        ideal = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        # a grid calibration samples the sensor too sparsely to see the ripple
        measured = replace(self, ripple=0.0).distort(ideal)
        return fit_distortion(ideal, measured, degree, self.length).coeffs

    def to_dict(self) -> dict:
        return {
            "barrel": self.barrel,
            "pincushion": self.pincushion,
            "ripple": self.ripple,
            "ripple_period": self.ripple_period,
            "ripple_phase": list(self.ripple_phase),
        }


@dataclass(frozen=True)
class PowerSettings:
    kp: float = 3e-6  # per count, in the log-drive units of the simulated LED driver
    latency_frames: int = 0
    initial_power: float = 0.5
    # LUT generation
    target_at_1m: float = 18000.0  # counts; SNR-driven target grows linearly with depth
    cap_fraction: float = 0.9  # of the achievable sum at full power
    adc_cap: float = 26000.0


@dataclass(frozen=True)
class SimRig:
    """Everything the simulator treats as physical truth.

    ``stereo`` is the rig as the tracker knows it: true pinhole parameters
    and extrinsics, with inverse-distortion nets fitted to ``lenses``.
    """

    stereo: StereoRig
    lenses: tuple = field(default_factory=lambda: default_lenses())
    tou: TouGeometry = field(default_factory=TouGeometry)
    imu_object: Rotation = Rotation((0.9999, 0.0027, -0.0043, 0.0095))
    imu_base: Rotation = Rotation((0.9967, -0.0201, -0.0713, -0.0323))
    base_in_world: Rotation = Rotation.from_rotvec((0.3, -0.2, 1.1))
    pattern: PatternConfig = field(default_factory=PatternConfig)
    power: PowerSettings = field(default_factory=PowerSettings)

    @property
    def midline_x(self) -> float:
        return 0.5 * float(self.stereo.extrinsics.translation[0])

    def rig_config(self) -> RigConfig:
        return RigConfig(self.imu_object, self.imu_base, self.tou.pivot_offsets(), self.stereo)

    def truth_calibration(self) -> CalibrationResult:
        return CalibrationResult(
            imu_object=self.imu_object,
            imu_base=self.imu_base,
            q=self.tou.pivot_offsets(),
            pivot=np.zeros(3),
            converged=True,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SIM_SCHEMA_VERSION,
            "stereo": self.stereo.to_dict(),
            "lenses": [lens.to_dict() for lens in self.lenses],
            "tou": {"ring_radius": self.tou.ring_radius, "ring_height": self.tou.ring_height},
            "imu_object": self.imu_object.tolist(),
            "imu_base": self.imu_base.tolist(),
            "base_in_world": self.base_in_world.tolist(),
            "pattern": self.pattern.to_dict(),
            "power": dict(self.power.__dict__),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimRig":
        if d.get("schema_version") != SIM_SCHEMA_VERSION:
            raise ValueError(f"unsupported rig schema_version {d.get('schema_version')!r}")
        # "seed" may ride along in a CLI config file
        unknown = set(d) - set(default_sim_rig().to_dict()) - {"seed"}
        if unknown:
            raise ValueError(f"unknown rig fields: {sorted(unknown)}")
        base = default_sim_rig()
        lenses = tuple(RadialLens(**lens) for lens in d["lenses"]) if "lenses" in d else base.lenses
        if len(lenses) != 2:
            raise ValueError("need exactly two lenses (left, right)")
        return cls(
            stereo=StereoRig.from_dict(d["stereo"]) if "stereo" in d else base.stereo,
            lenses=lenses,
            tou=TouGeometry(**d["tou"]) if "tou" in d else base.tou,
            imu_object=Rotation(d["imu_object"]) if "imu_object" in d else base.imu_object,
            imu_base=Rotation(d["imu_base"]) if "imu_base" in d else base.imu_base,
            base_in_world=Rotation(d["base_in_world"]) if "base_in_world" in d else base.base_in_world,
            pattern=PatternConfig(**d["pattern"]) if "pattern" in d else base.pattern,
            power=PowerSettings(**d["power"]) if "power" in d else base.power,
        )


def default_lenses(ripple: float = DEFAULT_RIPPLE) -> tuple:
    return (
        RadialLens(ripple=ripple, ripple_phase=(0.4, 1.9)),
        RadialLens(-0.0135, 0.0055, ripple=ripple, ripple_phase=(2.2, 0.7)),
    )


def default_sim_rig(baseline: float = 150.0, toe_in_deg: float = 3.0, ripple: float = DEFAULT_RIPPLE) -> SimRig:
    """Desk-scale head: two 8.5 mm PSD cameras ``baseline`` apart, right one toed in."""
    lenses = default_lenses(ripple)
    left = PsdIntrinsics(principal_point=(0.021, -0.013), bernstein_coeffs=lenses[0].fitted_net())
    right = PsdIntrinsics(focal_length=8.47, principal_point=(-0.017, 0.009), bernstein_coeffs=lenses[1].fitted_net())
    ext = RigidTransform(Rotation.about_y(-toe_in_deg) @ Rotation.about_x(0.2), np.array([baseline, 0.4, -0.8]))
    return SimRig(stereo=StereoRig(left, right, ext), lenses=lenses)
