"""Stereo PSD calibration from a planar grid of IR-LEDs.

Each PSD is initialised in closed form from plane-to-sensor homographies
(Zhang's method), the right-to-left transform from paired grid poses, and
then everything is refined jointly by nonlinear least squares on the sensor
residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from ..errors import ConvergenceError, InsufficientDataError, RankDeficiencyError
from ..geometry import RigidTransform, Rotation, project_to_so3
from ..psd_optics import S5991_LENGTH, PsdIntrinsics, StereoRig, evaluate_net, identity_net, pinhole

__all__ = ["GridGeometry", "GridObservation", "StereoCalibration", "calibrate_stereo", "estimate_homography"]


@dataclass(frozen=True)
class GridGeometry:
    """Planar LED grid, ``cols`` x ``rows`` points at ``pitch`` mm, centred on its origin."""

    cols: int = 4
    rows: int = 3
    pitch: float = 50.0

    @property
    def size(self) -> int:
        return self.cols * self.rows

    def points(self) -> np.ndarray:
        idx = np.arange(self.size)
        x = (idx % self.cols - (self.cols - 1) / 2) * self.pitch
        y = (idx // self.cols - (self.rows - 1) / 2) * self.pitch
        return np.stack([x, y, np.zeros_like(x)], axis=1)


@dataclass(frozen=True)
class GridObservation:
    """One grid pose: ``(index, left_xy or None, right_xy or None)`` per lit LED."""

    pose_id: int
    points: tuple
    grid: GridGeometry = field(default_factory=GridGeometry)

    def side(self, which: str):
        k = 1 if which == "left" else 2
        rows = [(p[0], p[k]) for p in self.points if p[k] is not None]
        idx = np.array([r[0] for r in rows], dtype=int)
        xy = np.array([r[1] for r in rows], dtype=float).reshape(-1, 2)
        return idx, xy


@dataclass
class StereoCalibration:
    rig: StereoRig
    reprojection_rms: float  # mm, both PSDs
    left_rms: float
    right_rms: float
    grid_poses: list  # grid-to-left RigidTransform per observation
    nfev: int = 0


def _normalisation(pts):
    c = pts.mean(axis=0)
    s = np.sqrt(2) / np.mean(np.linalg.norm(pts - c, axis=1))
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])


def estimate_homography(src, dst) -> np.ndarray:
    """Normalised DLT homography mapping 2-D ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4:
        raise InsufficientDataError("homography needs at least 4 points")
    ts, td = _normalisation(src), _normalisation(dst)
    s = (np.c_[src, np.ones(len(src))] @ ts.T)
    d = (np.c_[dst, np.ones(len(dst))] @ td.T)
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    return h / h[2, 2]


def _v(h, i, j):
    return np.array(
        [
            h[0, i] * h[0, j],
            h[0, i] * h[1, j] + h[1, i] * h[0, j],
            h[1, i] * h[1, j],
            h[2, i] * h[0, j] + h[0, i] * h[2, j],
            h[2, i] * h[1, j] + h[1, i] * h[2, j],
            h[2, i] * h[2, j],
        ]
    )


def _zhang_intrinsics(homographies):
    v = np.vstack([np.vstack([_v(h, 0, 1), _v(h, 0, 0) - _v(h, 1, 1)]) for h in homographies])
    # condition the system; homographies mix mm on the grid with mm on the sensor
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    _, s, vt = np.linalg.svd(v)
    if len(s) < 6 or s[-2] <= 1e-9 * s[0]:
        raise RankDeficiencyError("grid poses are degenerate: add poses with different plane orientations")
    b11, b12, b22, b13, b23, b33 = vt[-1] if vt[-1][0] > 0 else -vt[-1]
    v0 = (b12 * b13 - b11 * b23) / (b11 * b22 - b12**2)
    lam = b33 - (b13**2 + v0 * (b12 * b13 - b11 * b23)) / b11
    alpha = np.sqrt(lam / b11)
    beta = np.sqrt(lam * b11 / (b11 * b22 - b12**2))
    gamma = -b12 * alpha**2 * beta / lam
    u0 = gamma * v0 / beta - b13 * alpha**2 / lam
    return np.array([[alpha, gamma, u0], [0, beta, v0], [0, 0, 1]])


def _pose_from_homography(k, h) -> RigidTransform:
    kinv = np.linalg.inv(k)
    scale = 1.0 / np.linalg.norm(kinv @ h[:, 0])
    r1 = scale * kinv @ h[:, 0]
    r2 = scale * kinv @ h[:, 1]
    t = scale * kinv @ h[:, 2]
    if t[2] < 0:
        r1, r2, t = -r1, -r2, -t
    rot = project_to_so3(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return RigidTransform(rot, t)


def _init_camera(observations, which, grid_pts):
    homs, ids = [], []
    for n, obs in enumerate(observations):
        idx, xy = obs.side(which)
        if len(idx) >= 6:
            homs.append(estimate_homography(grid_pts[idx, :2], xy))
            ids.append(n)
    if len(homs) < 3:
        raise RankDeficiencyError(
            f"{which} PSD: planar calibration needs at least 3 grid poses with >= 6 points, got {len(homs)}"
        )
    k = _zhang_intrinsics(homs)
    f = 0.5 * (k[0, 0] + k[1, 1])
    intr = PsdIntrinsics(focal_length=f, principal_point=(k[0, 2], k[1, 2]), skew=k[0, 1] / f)
    poses = {n: _pose_from_homography(k, h) for n, h in zip(ids, homs)}
    return intr, poses


def calibrate_stereo(
    observations: Sequence[GridObservation],
    *,
    left_net: np.ndarray | None = None,
    right_net: np.ndarray | None = None,
    resistance_length: float = S5991_LENGTH,
    max_nfev: int | None = None,
    tol: float = 1e-12,
) -> StereoCalibration:
    """Intrinsic and extrinsic calibration of a PSD pair.

    Args:
        observations: grid poses seen by the rig; at least 3 per PSD.
        left_net, right_net: inverse-distortion nets (from
            :func:`fit_distortion`) applied to the measurements first and
            stored in the returned rig.  Identity when omitted.
        resistance_length: sensor size for the distortion domain.

    Raises:
        RankDeficiencyError: too few or coplanar grid poses.
        ConvergenceError: the joint refinement did not converge.
    """
    observations = list(observations)
    if not observations:
        raise RankDeficiencyError("no grid observations")
    grid_pts = observations[0].grid.points()
    left0, left_poses = _init_camera(observations, "left", grid_pts)
    right0, right_poses = _init_camera(observations, "right", grid_pts)

    shared = sorted(set(left_poses) & set(right_poses))
    if not shared:
        raise RankDeficiencyError("no grid pose seen by both PSDs")
    ext_r = [left_poses[n].rotation.matrix @ right_poses[n].rotation.matrix.T for n in shared]
    r_ext = project_to_so3(np.sum(ext_r, axis=0))
    t_ext = np.mean([left_poses[n].translation - r_ext.apply(right_poses[n].translation) for n in shared], axis=0)
    ext0 = RigidTransform(r_ext, t_ext)

    pose0 = []
    for n in range(len(observations)):
        if n in left_poses:
            pose0.append(left_poses[n])
        elif n in right_poses:
            pose0.append(ext0 @ right_poses[n])
        else:
            raise InsufficientDataError(f"grid pose {observations[n].pose_id} has fewer than 6 points on both PSDs")

    nets = [np.asarray(identity_net(3, resistance_length) if n is None else n, dtype=float) for n in (left_net, right_net)]
    n_cam = 4

    def cam_vec(intr):
        return np.r_[intr.focal_length, intr.principal_point, intr.skew]

    def to_intr(v, net):
        return PsdIntrinsics(
            focal_length=v[0], principal_point=(v[1], v[2]), skew=v[3],
            resistance_length=resistance_length, bernstein_coeffs=net,
        )

    x0 = np.concatenate(
        [cam_vec(left0), cam_vec(right0), ext0.rotation.rotvec, ext0.translation]
        + [np.r_[p.rotation.rotvec, p.translation] for p in pose0]
    )
    sides = []
    for obs in observations:
        (il, xyl), (ir, xyr) = obs.side("left"), obs.side("right")
        if len(il):
            xyl = evaluate_net(nets[0], xyl, resistance_length)[0]
        if len(ir):
            xyr = evaluate_net(nets[1], xyr, resistance_length)[0]
        sides.append(((il, xyl), (ir, xyr)))

    def unpack(x):
        left = to_intr(x[:n_cam], nets[0])
        right = to_intr(x[n_cam : 2 * n_cam], nets[1])
        o = 2 * n_cam
        ext = RigidTransform(Rotation.from_rotvec(x[o : o + 3]), x[o + 3 : o + 6])
        poses = []
        for k in range(len(observations)):
            b = o + 6 + 6 * k
            poses.append(RigidTransform(Rotation.from_rotvec(x[b : b + 3]), x[b + 3 : b + 6]))
        return left, right, ext, poses

    def residuals(x, split=False):
        left, right, ext, poses = unpack(x)
        ext_inv = ext.inv()
        res_l, res_r = [], []
        for ((il, xyl), (ir, xyr)), pose in zip(sides, poses):
            if len(il):
                res_l.append(xyl - pinhole(pose.apply(grid_pts[il]), left))
            if len(ir):
                res_r.append(xyr - pinhole(ext_inv.apply(pose.apply(grid_pts[ir])), right))
        rl = np.concatenate(res_l) if res_l else np.zeros((0, 2))
        rr = np.concatenate(res_r) if res_r else np.zeros((0, 2))
        if split:
            return rl, rr
        return np.concatenate([rl.ravel(), rr.ravel()])

    # Grid poses touch disjoint residual rows, so the same coordinate of every
    # pose can be perturbed in one evaluation: the Jacobian costs
    # 2 * n_cam + 12 residual calls however many poses there are.
    o = 2 * n_cam
    n_poses = len(observations)
    owner = np.concatenate(
        [np.repeat(k, 2 * len(il)) for k, ((il, _), _) in enumerate(sides)]
        + [np.repeat(k, 2 * len(ir)) for k, (_, (ir, _)) in enumerate(sides)]
    )

    def jacobian(x):
        r0 = residuals(x)
        jac = np.zeros((len(r0), len(x)))
        for c in range(o + 6):
            h = 1e-7 * max(1.0, abs(x[c]))
            xp = x.copy()
            xp[c] += h
            jac[:, c] = (residuals(xp) - r0) / h
        for m in range(6):
            cols = o + 6 + 6 * np.arange(n_poses) + m
            h = 1e-7 * np.maximum(1.0, np.abs(x[cols]))
            xp = x.copy()
            xp[cols] += h
            diff = residuals(xp) - r0
            jac[np.arange(len(r0)), cols[owner]] = diff / h[owner]
        return jac

    sol = least_squares(
        residuals, x0, jac=jacobian, method="lm", xtol=tol, ftol=tol, gtol=tol, max_nfev=max_nfev, x_scale="jac"
    )
    if sol.status <= 0:
        raise ConvergenceError(f"stereo refinement did not converge: {sol.message}", residual=float(sol.cost))
    rl, rr = residuals(sol.x, split=True)
    left, right, ext, poses = unpack(sol.x)

    def rms(r):
        return float(np.sqrt(np.mean(np.sum(r**2, axis=1)))) if len(r) else 0.0

    return StereoCalibration(
        rig=StereoRig(left, right, ext),
        reprojection_rms=rms(np.concatenate([rl, rr])),
        left_rms=rms(rl),
        right_rms=rms(rr),
        grid_poses=poses,
        nfev=int(sol.nfev),
    )
