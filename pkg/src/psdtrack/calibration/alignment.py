"""IMU alignment solvers: object-IMU rotation and the iterative pivot method.

Both solvers follow the same pattern: build an overdetermined linear system
from every pair of samples, solve it with a pseudo-inverse, and project the
resulting 3x3 block onto SO(3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from ..errors import DivergenceError, InsufficientDataError, RankDeficiencyError
from ..geometry import Rotation, project_to_so3, vec3

__all__ = [
    "OrientationSamplePair",
    "LedSampleSet",
    "ObjectImuCalibration",
    "CalibrationResult",
    "calibrate_object_imu",
    "pivot_calibrate",
    "pair_indices",
]


@dataclass(frozen=True)
class OrientationSamplePair:
    reference: Rotation  # ground-truth object orientation in the earth frame
    measured: Rotation  # raw object-IMU orientation in the earth frame


@dataclass(frozen=True)
class LedSampleSet:
    """Pivot samples for one LED: triangulated positions and measured ``bRo``.

    ``orientations`` are relative orientations computed with an identity
    base-IMU alignment, i.e. ``inv(gR_IMUb) @ gRo``.
    """

    led: int
    positions: np.ndarray  # (N, 3) mm, left-PSD frame
    orientations: tuple  # N Rotation

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "orientations", tuple(self.orientations))
        if len(self.orientations) != len(p):
            raise ValueError("positions and orientations differ in length")
        if len(p) < 4:
            raise InsufficientDataError(f"LED {self.led}: need at least 4 samples, got {len(p)}")

    def __len__(self):
        return len(self.positions)


@dataclass
class ObjectImuCalibration:
    rotation: Rotation
    residual: float  # RMS of the stacked system before SO(3) projection
    raw: np.ndarray  # least-squares matrix before projection


@dataclass
class CalibrationResult:
    imu_object: Rotation  # IMUoRo
    imu_base: Rotation  # IMUbRb, convention gRb = gR_IMUb @ IMUbRb
    q: dict  # led -> pivot offset in the object frame (mm)
    pivot: np.ndarray  # global pivot estimate in the base frame (mm)
    pivot_per_led: dict = field(default_factory=dict)
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "imu_object": self.imu_object.tolist(),
            "imu_base": self.imu_base.tolist(),
            "q": {str(k): [float(c) for c in v] for k, v in sorted(self.q.items())},
            "pivot": [float(c) for c in self.pivot],
            "pivot_per_led": {str(k): [float(c) for c in v] for k, v in sorted(self.pivot_per_led.items())},
            "residual_history": [float(e) for e in self.residual_history],
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        if d.get("schema_version") != 1:
            raise ValueError(f"unsupported calibration schema_version {d.get('schema_version')!r}")
        unknown = set(d) - {"schema_version", "imu_object", "imu_base", "q", "pivot", "pivot_per_led", "residual_history", "iterations", "converged"}
        if unknown:
            raise ValueError(f"unknown calibration fields: {sorted(unknown)}")
        return cls(
            imu_object=Rotation(d.get("imu_object", [1, 0, 0, 0])),
            imu_base=Rotation(d.get("imu_base", [1, 0, 0, 0])),
            q={int(k): vec3(v) for k, v in d["q"].items()},
            pivot=vec3(d.get("pivot", [0, 0, 0])),
            pivot_per_led={int(k): vec3(v) for k, v in d.get("pivot_per_led", {}).items()},
            residual_history=list(d.get("residual_history", [])),
            iterations=int(d.get("iterations", 0)),
            converged=bool(d.get("converged", False)),
        )


def pair_indices(n: int, max_pairs: int | None = None, rng=None):
    """All ``(j, k)`` with ``j < k``; optionally a random subsample of them."""
    pairs = np.array(list(combinations(range(n), 2)), dtype=int).reshape(-1, 2)
    if max_pairs is not None and len(pairs) > max_pairs:
        rng = np.random.default_rng(0) if rng is None else rng
        keep = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = pairs[keep]
    return pairs


def _check_rank(a: np.ndarray, what: str, led=None, rtol: float = 1e-9):
    s = np.linalg.svd(a, compute_uv=False)
    if len(s) < a.shape[1] or s[0] == 0 or s[-1] <= rtol * s[0]:
        raise RankDeficiencyError(f"{what}: stacked system is rank deficient (singular values {s})", led=led)


def calibrate_object_imu(pairs: Sequence[OrientationSamplePair]) -> ObjectImuCalibration:
    """Estimate the fixed rotation between the object IMU and the object body.

    Stacks ``Rref_j - Rref_k = (Rimu_j - Rimu_k) X`` over every pair and solves
    for ``X`` by least squares.
    """
    if len(pairs) < 3:
        raise InsufficientDataError("object-IMU calibration needs at least 3 sample pairs")
    ref = np.stack([p.reference.matrix for p in pairs])
    imu = np.stack([p.measured.matrix for p in pairs])
    jk = pair_indices(len(pairs))
    a = (imu[jk[:, 0]] - imu[jk[:, 1]]).reshape(-1, 3)
    b = (ref[jk[:, 0]] - ref[jk[:, 1]]).reshape(-1, 3)
    _check_rank(a, "object-IMU calibration (degenerate motion)")
    x = np.linalg.pinv(a) @ b
    residual = float(np.sqrt(np.mean((a @ x - b) ** 2)))
    return ObjectImuCalibration(project_to_so3(x), residual, x)


def _led_systems(s: LedSampleSet, rots: np.ndarray, jk: np.ndarray):
    """Stacked pairwise systems for one LED's q_i and Q_i."""
    p = s.positions
    rj, rk = rots[jk[:, 0]], rots[jk[:, 1]]
    pj, pk = p[jk[:, 0]], p[jk[:, 1]]
    r = (rj - rk).reshape(-1, 3)
    t = (pk - pj).reshape(-1)
    # inverse of an orthonormal block is its transpose
    rjt, rkt = np.swapaxes(rj, 1, 2), np.swapaxes(rk, 1, 2)
    big_r = (rjt - rkt).reshape(-1, 3)
    big_t = (np.einsum("nab,nb->na", rjt, pj) - np.einsum("nab,nb->na", rkt, pk)).reshape(-1)
    return r, t, big_r, big_t


def _anderson_step(xs, gs, depth):
    """Type-II Anderson mixing over the last ``depth`` fixed-point evaluations."""
    f = [g - x for x, g in zip(xs, gs)]
    if len(f) < 2:
        return gs[-1]
    df = np.stack([f[i + 1] - f[i] for i in range(len(f) - 1)], axis=1)
    dg = np.stack([gs[i + 1] - gs[i] for i in range(len(gs) - 1)], axis=1)
    gamma = np.linalg.lstsq(df, f[-1], rcond=1e-10)[0]
    return gs[-1] - dg @ gamma


def pivot_calibrate(
    sets: Sequence[LedSampleSet],
    *,
    threshold: float = 1e-6,
    max_iterations: int = 100,
    error_weight: float = 1.0,
    divergence_patience: int = 5,
    divergence_rtol: float = 1e-3,
    stall_rtol: float = 1e-12,
    max_pairs: int | None = None,
    accelerate: bool = True,
    anderson_depth: int = 3,
    imu_object: Rotation | None = None,
) -> CalibrationResult:
    """Iterative pivot calibration of the base-IMU rotation and LED offsets.

    Each iteration (1) solves every LED's pairwise systems for its pivot offset
    ``q_i`` and pivot position ``Q_i`` plus one stacked system for the common
    pivot ``Q``, (2) re-solves the base alignment ``Delta`` mapping
    ``bRo_j q_i`` onto ``Q - P_i``, (3) accumulates the pairwise residuals.

    The plain iteration contracts linearly and slowly when the samples of each
    LED span a modest cone of orientations.  With ``accelerate`` the rotation
    vector of ``Delta`` fed into the next iteration is Anderson-mixed from the
    last ``anderson_depth`` iterates; steps (1)-(3) and the fixed point are
    unchanged.

    ``Delta`` left-multiplies the measured relative orientation, so with the
    fusion convention ``gRb = gR_IMUb @ IMUbRb`` the returned base rotation is
    ``inv(Delta)``.

    Args:
        sets: one :class:`LedSampleSet` per LED.
        threshold: stop once the mean per-term residual drops below this.
        max_iterations: hard iteration cap.
        error_weight: weight of the per-sample pivot-consistency term relative
            to the pairwise term when accumulating the error.
        divergence_patience: consecutive residual increases tolerated.
        divergence_rtol: relative growth that counts as an increase; noisy
            data settles on a fixed point whose residual can sit slightly
            above an earlier transient.
        stall_rtol: relative change below which the residual is considered
            stationary (noisy data never reaches ``threshold``).
        max_pairs: optional cap on pairs per LED (random, seeded).
        accelerate: Anderson-mix ``Delta`` between iterations.
        anderson_depth: number of past iterates used for mixing.
        imu_object: carried through to the result unchanged.

    Raises:
        RankDeficiencyError: an LED's samples lack rotational diversity.
        DivergenceError: the residual grew ``divergence_patience`` times in a row.
    """
    if not sets:
        raise InsufficientDataError("pivot calibration needs at least one LED sample set")
    raw = [np.stack([r.matrix for r in s.orientations]) for s in sets]
    pairs = [pair_indices(len(s), max_pairs) for s in sets]
    for s, rots, jk in zip(sets, raw, pairs):
        r, _, big_r, _ = _led_systems(s, rots, jk)
        _check_rank(r, f"LED {s.led} pivot offset (insufficient rotational diversity)", led=s.led)
        _check_rank(big_r, f"LED {s.led} pivot position (insufficient rotational diversity)", led=s.led)

    def iterate(delta):
        # (1) per-LED q_i, Q_i and the common pivot Q
        q_hat, q_led = {}, {}
        stack_r, stack_t = [], []
        for s, rots, jk in zip(sets, raw, pairs):
            r, t, big_r, big_t = _led_systems(s, delta @ rots, jk)
            q_hat[s.led] = np.linalg.pinv(r) @ t
            q_led[s.led] = np.linalg.pinv(big_r) @ big_t
            stack_r.append(big_r)
            stack_t.append(big_t)
        pivot = np.linalg.pinv(np.concatenate(stack_r)) @ np.concatenate(stack_t)

        # (2) Delta @ (bRo_j q_i) = Q - P_i, solved as A' x = b
        a = np.concatenate([rots @ q_hat[s.led] for s, rots in zip(sets, raw)])
        b = np.concatenate([pivot - s.positions for s in sets])
        new_delta = project_to_so3(np.linalg.lstsq(a, b, rcond=None)[0].T).matrix

        # (3) accumulated residuals
        total, terms = 0.0, 0
        for s, rots, jk in zip(sets, raw, pairs):
            cur = new_delta @ rots
            qi = q_hat[s.led]
            p = s.positions
            pair_res = (cur[jk[:, 0]] - cur[jk[:, 1]]) @ qi + p[jk[:, 0]] - p[jk[:, 1]]
            total += np.linalg.norm(pair_res, axis=1).sum()
            point_res = q_led[s.led] - (cur[:-1] @ qi + p[:-1])
            total += error_weight * np.linalg.norm(point_res, axis=1).sum()
            terms += len(jk) + len(p) - 1
        return q_hat, q_led, pivot, new_delta, total / terms

    delta = np.eye(3)
    xs: list = []
    gs: list = []
    history: list[float] = []
    increases = 0
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        q_hat, q_led, pivot, new_delta, err = iterate(delta)
        history.append(float(err))
        if err < threshold:
            converged = True
            delta = new_delta
            break
        if len(history) > 1:
            prev = history[-2]
            if abs(prev - err) <= stall_rtol * max(prev, 1e-300):
                converged = True
                delta = new_delta
                break
            increases = increases + 1 if err > prev * (1.0 + divergence_rtol) else 0
            if increases >= divergence_patience:
                raise DivergenceError(
                    f"pivot calibration residual increased {increases} iterations in a row", history
                )
        if accelerate:
            xs.append(Rotation.from_matrix(delta).rotvec)
            gs.append(Rotation.from_matrix(new_delta).rotvec)
            del xs[: -(anderson_depth + 1)], gs[: -(anderson_depth + 1)]
            delta = Rotation.from_rotvec(_anderson_step(xs, gs, anderson_depth)).matrix
        else:
            delta = new_delta

    return CalibrationResult(
        imu_object=imu_object if imu_object is not None else Rotation.identity(),
        imu_base=Rotation.from_matrix(delta).inv(),
        q=q_hat,
        pivot=pivot,
        pivot_per_led=q_led,
        residual_history=history,
        iterations=it,
        converged=converged,
    )
