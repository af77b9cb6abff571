"""PSD signal model, Bernstein distortion surfaces, projection and triangulation.

Frames: every PSD frame has ``z`` forward along the optical axis, ``x`` right
and ``y`` down.  The left PSD frame is the rig (base) frame.  Sensor
coordinates are millimetres measured from the electrical centre of the PSD.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np

from .errors import BehindSensorError, DegenerateGeometryError, NoSignalError, OutOfRangeError
from .geometry import RigidTransform, vec3

__all__ = [
    "S5991_LENGTH",
    "DEFAULT_FOCAL_LENGTH",
    "PsdCurrents",
    "PsdPoint",
    "PsdIntrinsics",
    "StereoRig",
    "currents_to_position",
    "channels_to_position",
    "position_to_currents",
    "bernstein_basis",
    "bernstein_design",
    "identity_net",
    "evaluate_net",
    "undistort",
    "undistort_points",
    "distort_points",
    "pinhole",
    "project",
    "project_points",
    "back_project",
    "triangulate",
    "triangulate_points",
    "disparity",
]

S5991_LENGTH = 9.0  # mm, active area 9 x 9
DEFAULT_FOCAL_LENGTH = 8.5  # mm
DEFAULT_DEGREE = 3


class PsdPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class PsdCurrents:
    """Electrode photocurrents in microamperes."""

    i1: float
    i2: float
    i3: float
    i4: float

    def __post_init__(self):
        if min(self.i1, self.i2, self.i3, self.i4) < 0:
            raise ValueError(f"photocurrents must be nonnegative: {self}")

    @property
    def total(self) -> float:
        return self.i1 + self.i2 + self.i3 + self.i4

    def scaled(self, k: float) -> "PsdCurrents":
        return PsdCurrents(k * self.i1, k * self.i2, k * self.i3, k * self.i4)


def channels_to_position(diff_x, diff_y, total, length: float = S5991_LENGTH):
    """Sensor position from the analog channels ``(I2+I3-I1-I4, I2+I4-I1-I3, sum)``.

    Works on scalars or arrays; zero ``total`` yields ``nan``.
    """
    total = np.asarray(total, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = 0.5 * length * np.asarray(diff_x, dtype=float) / total
        y = 0.5 * length * np.asarray(diff_y, dtype=float) / total
    return x, y


def currents_to_position(c: PsdCurrents, length: float = S5991_LENGTH) -> PsdPoint:
    total = c.total
    if not total > 0:
        raise NoSignalError("total photocurrent is zero")
    x, y = channels_to_position((c.i2 + c.i3) - (c.i1 + c.i4), (c.i2 + c.i4) - (c.i1 + c.i3), total, length)
    return PsdPoint(float(x), float(y))


def position_to_currents(p, total: float, length: float = S5991_LENGTH) -> PsdCurrents:
    """Split ``total`` over the four electrodes with bilinear weights.

    The split is the unique bilinear one reproducing ``p`` under
    :func:`currents_to_position`.
    """
    x, y = p
    half = 0.5 * length
    if abs(x) > half or abs(y) > half:
        raise OutOfRangeError(f"point ({x}, {y}) outside the {length} mm active area")
    if not total > 0:
        raise ValueError("total current must be positive")
    u = (x + half) / length
    v = (y + half) / length
    return PsdCurrents(total * (1 - u) * (1 - v), total * u * v, total * u * (1 - v), total * (1 - u) * v)


# -- Bernstein surfaces -----------------------------------------------------------


def bernstein_basis(n: int, t) -> np.ndarray:
    """Univariate Bernstein basis of degree ``n`` at ``t``; shape ``(len(t), n + 1)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))[:, None]
    i = np.arange(n + 1)
    coef = np.array([comb(n, k) for k in i], dtype=float)
    return coef * t**i * (1.0 - t) ** (n - i)


def _bernstein_basis_deriv(n: int, t) -> np.ndarray:
    if n == 0:
        return np.zeros((np.size(t), 1))
    lower = bernstein_basis(n - 1, t)
    pad = np.zeros((lower.shape[0], 1))
    return n * (np.hstack([pad, lower]) - np.hstack([lower, pad]))


def _to_unit(xy, length):
    return np.asarray(xy, dtype=float) / length + 0.5


def bernstein_design(xy, n: int, length: float = S5991_LENGTH) -> np.ndarray:
    """Tensor-product design matrix; column ``i * (n + 1) + j`` is ``b_i(u) b_j(v)``."""
    uv = _to_unit(np.atleast_2d(xy), length)
    bu = bernstein_basis(n, uv[:, 0])
    bv = bernstein_basis(n, uv[:, 1])
    return (bu[:, :, None] * bv[:, None, :]).reshape(len(uv), -1)


def identity_net(n: int, length: float = S5991_LENGTH) -> np.ndarray:
    """Control net reproducing the identity map; shape ``(n + 1, n + 1, 2)``."""
    if n < 1:
        raise ValueError("the identity map needs degree >= 1")
    g = (np.arange(n + 1) / n - 0.5) * length
    net = np.empty((n + 1, n + 1, 2))
    net[..., 0] = g[:, None]
    net[..., 1] = g[None, :]
    return net


def evaluate_net(coeffs: np.ndarray, xy, length: float = S5991_LENGTH):
    """Evaluate a Bernstein control net at sensor points.

    Returns:
        ``(points, in_domain)`` where ``in_domain`` flags points inside the
        sensor square; outside it the surface is extrapolated.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[0] - 1
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    design = bernstein_design(xy, n, length)
    out = design @ coeffs.reshape(-1, 2)
    in_domain = np.all(np.abs(xy) <= 0.5 * length, axis=1)
    return out, in_domain


def _net_jacobian(coeffs, xy, length):
    n = coeffs.shape[0] - 1
    uv = _to_unit(xy, length)
    bu, bv = bernstein_basis(n, uv[:, 0]), bernstein_basis(n, uv[:, 1])
    du, dv = _bernstein_basis_deriv(n, uv[:, 0]), _bernstein_basis_deriv(n, uv[:, 1])
    c = coeffs.reshape(n + 1, n + 1, 2)
    # d/dx = d/du / length
    jx = np.einsum("ni,nj,ijk->nk", du, bv, c) / length
    jy = np.einsum("ni,nj,ijk->nk", bu, dv, c) / length
    return np.stack([jx, jy], axis=-1)  # (N, out, in)


@dataclass(frozen=True)
class PsdIntrinsics:
    """Pinhole parameters plus the inverse-distortion control net of one PSD.

    Projection: ``x = f (X + skew Y) / Z + cx``, ``y = f Y / Z + cy``.
    ``bernstein_coeffs`` maps measured sensor points to ideal ones.
    """

    focal_length: float = DEFAULT_FOCAL_LENGTH
    principal_point: tuple = (0.0, 0.0)
    skew: float = 0.0
    resistance_length: float = S5991_LENGTH
    bernstein_coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.focal_length > 0 or not self.resistance_length > 0:
            raise ValueError("focal length and resistance length must be positive")
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))
        coeffs = self.bernstein_coeffs
        if coeffs is None:
            coeffs = identity_net(DEFAULT_DEGREE, self.resistance_length)
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.ndim != 3 or coeffs.shape[0] != coeffs.shape[1] or coeffs.shape[2] != 2:
            raise ValueError(f"bernstein coefficients must be (n+1, n+1, 2), got {coeffs.shape}")
        coeffs.flags.writeable = False
        object.__setattr__(self, "bernstein_coeffs", coeffs)

    @property
    def bernstein_degree(self) -> int:
        return self.bernstein_coeffs.shape[0] - 1

    def replace(self, **changes) -> "PsdIntrinsics":
        d = dict(
            focal_length=self.focal_length,
            principal_point=self.principal_point,
            skew=self.skew,
            resistance_length=self.resistance_length,
            bernstein_coeffs=self.bernstein_coeffs,
        )
        d.update(changes)
        return PsdIntrinsics(**d)

    def to_dict(self) -> dict:
        return {
            "focal_length": self.focal_length,
            "principal_point": list(self.principal_point),
            "skew": self.skew,
            "resistance_length": self.resistance_length,
            "bernstein_degree": self.bernstein_degree,
            "bernstein_coeffs": self.bernstein_coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PsdIntrinsics":
        coeffs = np.asarray(d["bernstein_coeffs"], dtype=float)
        if "bernstein_degree" in d and coeffs.shape[0] - 1 != int(d["bernstein_degree"]):
            raise ValueError("bernstein_degree does not match the coefficient array")
        return cls(
            focal_length=float(d["focal_length"]),
            principal_point=tuple(d.get("principal_point", (0.0, 0.0))),
            skew=float(d.get("skew", 0.0)),
            resistance_length=float(d.get("resistance_length", S5991_LENGTH)),
            bernstein_coeffs=coeffs,
        )


RIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class StereoRig:
    """Two PSDs; ``extrinsics`` maps right-PSD coordinates into the left frame."""

    left: PsdIntrinsics
    right: PsdIntrinsics
    extrinsics: RigidTransform

    def __post_init__(self):
        if not np.linalg.norm(self.extrinsics.translation) > 0:
            raise ValueError("stereo baseline must be nonzero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.extrinsics.translation))

    def to_dict(self) -> dict:
        return {
            "schema_version": RIG_SCHEMA_VERSION,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
            "extrinsics": self.extrinsics.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StereoRig":
        version = d.get("schema_version")
        if version != RIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported stereo rig schema_version {version!r}")
        return cls(
            PsdIntrinsics.from_dict(d["left"]),
            PsdIntrinsics.from_dict(d["right"]),
            RigidTransform.from_dict(d["extrinsics"]),
        )


# -- distortion ---------------------------------------------------------------------


def undistort_points(xy, intr: PsdIntrinsics):
    """Apply the inverse-distortion net to an ``(N, 2)`` array.

    Returns ``(ideal_xy, in_domain)``.
    """
    return evaluate_net(intr.bernstein_coeffs, xy, intr.resistance_length)


def undistort(p, intr: PsdIntrinsics) -> PsdPoint:
    out, _ = undistort_points(np.asarray(p, dtype=float)[None, :], intr)
    return PsdPoint(float(out[0, 0]), float(out[0, 1]))


def distort_points(ideal_xy, intr: PsdIntrinsics, tol: float = 1e-14, max_iter: int = 50) -> np.ndarray:
    """Measured positions whose undistortion equals ``ideal_xy`` (Newton)."""
    target = np.atleast_2d(np.asarray(ideal_xy, dtype=float))
    coeffs = intr.bernstein_coeffs
    length = intr.resistance_length
    m = target.copy()
    for _ in range(max_iter):
        val, _ = evaluate_net(coeffs, m, length)
        r = val - target
        if np.max(np.abs(r), initial=0.0) <= tol:
            break
        jac = _net_jacobian(coeffs, m, length)
        m = m - np.linalg.solve(jac, r[..., None])[..., 0]
    return m


# -- projection ---------------------------------------------------------------------


def pinhole(points_cam, intr: PsdIntrinsics) -> np.ndarray:
    """Ideal (undistorted) sensor positions of points in the PSD frame."""
    pc = np.atleast_2d(np.asarray(points_cam, dtype=float))
    z = pc[:, 2]
    if np.any(z <= 0):
        raise BehindSensorError("point has non-positive depth in the PSD frame")
    f = intr.focal_length
    cx, cy = intr.principal_point
    x = f * (pc[:, 0] + intr.skew * pc[:, 1]) / z + cx
    y = f * pc[:, 1] / z + cy
    return np.stack([x, y], axis=1)


def project_points(points, intr: PsdIntrinsics, pose: RigidTransform | None = None, distort: bool = True):
    """Project rig-frame points through a PSD whose frame-to-rig transform is ``pose``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam = pts if pose is None else pose.inv().apply(pts)
    ideal = pinhole(cam, intr)
    return distort_points(ideal, intr) if distort else ideal


def project(point, intr: PsdIntrinsics, pose: RigidTransform | None = None, distort: bool = True) -> PsdPoint:
    xy = project_points(vec3(point)[None, :], intr, pose, distort)[0]
    return PsdPoint(float(xy[0]), float(xy[1]))


def back_project(xy, intr: PsdIntrinsics) -> np.ndarray:
    """Ray directions ``(X/Z, Y/Z, 1)`` for undistorted sensor points."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    f = intr.focal_length
    cx, cy = intr.principal_point
    yz = (xy[:, 1] - cy) / f
    xz = (xy[:, 0] - cx) / f - intr.skew * yz
    return np.stack([xz, yz, np.ones_like(xz)], axis=1)


def triangulate_points(xl, xr, rig: StereoRig, parallel_tol: float = 1e-12):
    """Midpoint triangulation of undistorted point pairs, in the left frame.

    Returns ``(points, depth_left, depth_right)``; no validity checks.
    """
    dl = back_project(xl, rig.left)
    dr = rig.extrinsics.rotation.apply(back_project(xr, rig.right))
    o2 = rig.extrinsics.translation
    w0 = -o2
    a = np.einsum("ij,ij->i", dl, dl)
    b = np.einsum("ij,ij->i", dl, dr)
    c = np.einsum("ij,ij->i", dr, dr)
    d = dl @ w0
    e = dr @ w0
    denom = a * c - b * b
    bad = denom <= parallel_tol * a * c
    denom = np.where(bad, np.nan, denom)
    s = (b * e - c * d) / denom
    u = (a * e - b * d) / denom
    p1 = s[:, None] * dl
    p2 = o2 + u[:, None] * dr
    return 0.5 * (p1 + p2), s, u


def triangulate(xl, xr, rig: StereoRig) -> np.ndarray:
    """3-D point (left-PSD frame, mm) from one undistorted stereo pair."""
    pts, s, u = triangulate_points(np.asarray(xl, float)[None, :], np.asarray(xr, float)[None, :], rig)
    if not np.isfinite(s[0]):
        raise DegenerateGeometryError("back-projected rays are parallel")
    if s[0] <= 0 or u[0] <= 0:
        raise BehindSensorError("triangulated point lies behind a PSD")
    return pts[0]


def disparity(xl, xr) -> float:
    return float(xl[0] - xr[0])
