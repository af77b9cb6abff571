"""Least-squares fit of the Bernstein inverse-distortion net."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import InsufficientDataError
from ..psd_optics import S5991_LENGTH, bernstein_design

__all__ = ["DistortionFit", "fit_distortion"]


class DistortionFit(NamedTuple):
    coeffs: np.ndarray  # (n + 1, n + 1, 2)
    rms: float  # mm, residual of the fitted map on the input pairs


def fit_distortion(ideal_points, measured_points, degree: int = 3, length: float = S5991_LENGTH) -> DistortionFit:
    """Fit the net mapping ``measured_points`` onto ``ideal_points``.

    Raises:
        InsufficientDataError: fewer pairs than coefficients, or the pairs do
            not constrain every coefficient.
    """
    ideal = np.atleast_2d(np.asarray(ideal_points, dtype=float))
    measured = np.atleast_2d(np.asarray(measured_points, dtype=float))
    if ideal.shape != measured.shape or ideal.shape[1] != 2:
        raise ValueError("ideal and measured points must both be (N, 2)")
    n_coef = (degree + 1) ** 2
    if len(ideal) < n_coef:
        raise InsufficientDataError(f"degree {degree} needs at least {n_coef} point pairs, got {len(ideal)}")
    design = bernstein_design(measured, degree, length)
    if np.linalg.matrix_rank(design) < n_coef:
        raise InsufficientDataError("point pairs do not span the sensor well enough for this degree")
    beta, *_ = np.linalg.lstsq(design, ideal, rcond=None)
    resid = design @ beta - ideal
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return DistortionFit(beta.reshape(degree + 1, degree + 1, 2), rms)
