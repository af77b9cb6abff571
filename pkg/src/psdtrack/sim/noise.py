"""Noise, light and lens-mismatch settings of the simulator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

__all__ = ["NoiseModel", "fingerprint"]


@dataclass(frozen=True)
class NoiseModel:
    # PSD signal chain
    current_noise: float = 2e-4  # sigma per electrode current, fraction of signal
    read_noise: float = 1.6  # sigma per ADC conversion, counts
    quantize: bool = True
    adc_bits: int = 16
    # ambient light on the sum channel, counts: lux * counts_per_lux, plus a
    # ramp (counts/s) and a sinusoidal flicker (relative amplitude, Hz)
    ambient_lux: float = 100.0
    counts_per_lux: float = 2.0
    ambient_ramp: float = 0.0
    ambient_flicker: float = 0.01
    ambient_flicker_hz: float = 100.0
    ambient_centroid: tuple = (0.05, -0.03)  # diffX / diffY share of the ambient sum
    # LED emission: sum counts at 1 mm, on axis, full power; Lambertian lobe
    light_constant: float = 1.2e11
    beam_half_angle_deg: float = 60.0
    drive_dynamic_range: float = 1000.0  # brightness ratio between power 1 and power 0
    # IMUs
    imu_noise_deg: float = 0.0176  # sigma per axis per reading
    imu_dynamic_noise: float = 0.0035  # extra sigma per axis, deg per deg/s of angular speed
    imu_bias_drift_deg_per_min: float = 0.0
    imu_rate_hz: float | None = 100.0  # None: a reading at every ADC edge
    imu_clock_error: float = 0.01  # each IMU runs at rate * (1 + U(-e, e)); free-running, unsynchronised
    imu_latency_frames: int = 0
    psd_latency_frames: int = 0
    # "analytic": radial truth lens, tracker uses a fitted net.
    # "exact": the tracker's own net is the truth (no model mismatch).
    lens: str = "analytic"

    def __post_init__(self):
        for name in ("current_noise", "read_noise", "imu_noise_deg", "imu_dynamic_noise", "imu_bias_drift_deg_per_min", "ambient_lux"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 8 <= self.adc_bits <= 24:
            raise ValueError("adc_bits must lie in [8, 24]")
        if self.lens not in ("analytic", "exact"):
            raise ValueError("lens must be 'analytic' or 'exact'")
        if not 0 <= self.imu_clock_error < 0.5:
            raise ValueError("imu_clock_error must lie in [0, 0.5)")
        if self.imu_latency_frames < 0 or self.psd_latency_frames < 0:
            raise ValueError("latencies must be nonnegative")
        object.__setattr__(self, "ambient_centroid", tuple(self.ambient_centroid))

    @classmethod
    def zero(cls) -> "NoiseModel":
        """No noise, no ambient, no quantisation, ideal IMU sampling, exact lens."""
        return cls(
            current_noise=0.0,
            read_noise=0.0,
            quantize=False,
            ambient_lux=0.0,
            ambient_flicker=0.0,
            imu_noise_deg=0.0,
            imu_dynamic_noise=0.0,
            imu_rate_hz=None,
            imu_clock_error=0.0,
            lens="exact",
        )

    def scaled(self, factor: float) -> "NoiseModel":
        """Copy with both PSD noise terms multiplied by ``factor``."""
        return replace(self, current_noise=self.current_noise * factor, read_noise=self.read_noise * factor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ambient_centroid"] = list(self.ambient_centroid)
        d["schema_version"] = 1
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        d = dict(d)
        version = d.pop("schema_version", 1)
        if version != 1:
            raise ValueError(f"unsupported noise schema_version {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown noise fields {sorted(unknown)}")
        return replace(cls(), **d)


def fingerprint(*docs: dict) -> str:
    """Short SHA-256 of canonical JSON for a set of configuration documents."""
    blob = json.dumps(list(docs), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
