"""Rotation and rigid-transform algebra.

Quaternions are stored as ``(w, x, y, z)`` and canonicalised to the ``w >= 0``
hemisphere.  Angles are radians internally; :func:`angular_distance` is the
one public function that reports degrees.  Vectors are plain ``numpy`` arrays
of shape ``(3,)`` in millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError

__all__ = [
    "Rotation",
    "RigidTransform",
    "vec3",
    "compose",
    "invert",
    "project_to_so3",
    "angular_distance",
    "quat_multiply",
    "quat_conjugate",
    "quat_to_matrix",
    "matrix_to_quat",
    "rotvec_to_quat",
    "quat_to_rotvec",
    "canonical_quat",
]


def vec3(v) -> np.ndarray:
    out = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite vector component in {out}")
    return out


# -- batched quaternion helpers -----------------------------------------------
# All take arrays shaped (..., 4) / (..., 3) / (..., 3, 3) and broadcast.


def canonical_quat(q):
    """Normalise and flip into the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    # leave already-unit quaternions bit-for-bit alone so serialised rotations round-trip exactly
    q = np.where(np.abs(n - 1.0) <= 8 * np.finfo(float).eps, q, q / n)
    w = q[..., :1]
    # w == 0 is a measure-zero tie; break it on the first nonzero vector part
    first = np.where(q[..., 1:2] != 0, q[..., 1:2], np.where(q[..., 2:3] != 0, q[..., 2:3], q[..., 3:4]))
    sign = np.where(w > 0, 1.0, np.where(w < 0, -1.0, np.where(first >= 0, 1.0, -1.0)))
    return q * sign


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - z * w)
    m[..., 0, 2] = 2 * (x * z + y * w)
    m[..., 1, 0] = 2 * (x * y + z * w)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - x * w)
    m[..., 2, 0] = 2 * (x * z - y * w)
    m[..., 2, 1] = 2 * (y * z + x * w)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Shepperd's method; input must already be a proper rotation."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    tr = np.trace(m, axis1=1, axis2=2)
    diag = np.stack([m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    q = np.empty((m.shape[0], 4))
    for n in range(m.shape[0]):
        r = m[n]
        c = choice[n]
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[n])
            q[n] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q[n] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q[n] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q[n] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return canonical_quat(q).reshape(batch + (4,))


def rotvec_to_quat(v):
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(t/2)/t via its series below 1e-6 rad
    small = theta < 1e-6
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    return canonical_quat(np.concatenate([np.cos(half), v * k], axis=-1))


def quat_to_rotvec(q):
    q = canonical_quat(q)
    vnorm = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(vnorm, q[..., :1])
    small = vnorm < 1e-12
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, vnorm))
    return q[..., 1:] * scale


# -- value types ---------------------------------------------------------------


class Rotation:
    """Immutable 3-D rotation backed by a unit quaternion ``(w, x, y, z)``."""

    __slots__ = ("_q",)

    def __init__(self, quat):
        q = np.asarray(quat, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError(f"cannot build a rotation from quaternion {q}")
        q = canonical_quat(q)
        q.flags.writeable = False
        object.__setattr__(self, "_q", q)

    def __setattr__(self, name, value):
        raise AttributeError("Rotation is immutable")

    # constructors
    @classmethod
    def identity(cls) -> "Rotation":
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        return cls(matrix_to_quat(m))

    @classmethod
    def from_rotvec(cls, v) -> "Rotation":
        return cls(rotvec_to_quat(vec3(v)))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = vec3(axis)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    @classmethod
    def about_x(cls, deg: float) -> "Rotation":
        return cls.from_axis_angle((1, 0, 0), np.radians(deg))

    @classmethod
    def about_y(cls, deg: float) -> "Rotation":
        return cls.from_axis_angle((0, 1, 0), np.radians(deg))

    @classmethod
    def about_z(cls, deg: float) -> "Rotation":
        return cls.from_axis_angle((0, 0, 1), np.radians(deg))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rotation":
        """Uniformly distributed over SO(3)."""
        return cls(rng.standard_normal(4))

    # accessors
    @property
    def quat(self) -> np.ndarray:
        return self._q

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self._q)

    @property
    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self._q)

    @property
    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        return float(2.0 * np.arctan2(np.linalg.norm(self._q[1:]), abs(self._q[0])))

    def inv(self) -> "Rotation":
        return Rotation(quat_conjugate(self._q))

    def apply(self, v) -> np.ndarray:
        """Rotate a vector or an ``(N, 3)`` stack of vectors."""
        v = np.asarray(v, dtype=float)
        return v @ self.matrix.T

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation(quat_multiply(self._q, other._q))
        return NotImplemented

    def __eq__(self, other):
        return isinstance(other, Rotation) and bool(np.array_equal(self._q, other._q))

    def __hash__(self):
        return hash(self._q.tobytes())

    def __repr__(self):
        w, x, y, z = self._q
        return f"Rotation(w={w:.9f}, x={x:.9f}, y={y:.9f}, z={z:.9f})"

    def tolist(self) -> list:
        return [float(c) for c in self._q]


def compose(a: Rotation, b: Rotation) -> Rotation:
    """Rotation whose matrix is ``A @ B``."""
    return a @ b


def invert(r: Rotation) -> Rotation:
    return r.inv()


def project_to_so3(m, rcond: float = 1e-10) -> Rotation:
    """Nearest proper rotation to ``m`` in Frobenius norm.

    Raises:
        DegenerateInputError: if ``m`` is not of full rank.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise DegenerateInputError("expected a finite 3x3 matrix")
    u, s, vt = np.linalg.svd(m)
    if s[0] == 0.0 or s[-1] <= rcond * s[0]:
        raise DegenerateInputError(f"matrix is rank deficient (singular values {s})")
    d = np.sign(np.linalg.det(u @ vt))
    return Rotation.from_matrix(u @ np.diag([1.0, 1.0, d]) @ vt)


def angular_distance(a: Rotation, b: Rotation) -> float:
    """Geodesic angle between two rotations, in degrees."""
    rel = quat_multiply(quat_conjugate(a.quat), b.quat)
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0]))))


@dataclass(frozen=True)
class RigidTransform:
    """``p -> rotation.apply(p) + translation``."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = vec3(self.translation)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        return self.rotation.apply(points) + self.translation

    def inv(self) -> "RigidTransform":
        r_inv = self.rotation.inv()
        return RigidTransform(r_inv, -r_inv.apply(self.translation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation, self.apply(other.translation))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": [float(c) for c in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(Rotation(d["rotation"]), np.asarray(d["translation"], dtype=float))
