"""Vesselness response of a scalar field at a single analysis scale.

The measure follows Frangi et al. (1998), restricted to 2-D and to bright
curvilinear structures: with Hessian eigenvalues |lam1| <= |lam2| the
response is zero wherever lam2 > 0 and otherwise

    V = exp(-Rb^2 / (2 beta^2)) * (1 - exp(-S^2 / (2 c^2))),

where Rb = |lam1 / lam2| penalizes blobs and S^2 = lam1^2 + lam2^2 rewards
structure that stands out of the background.  The structuredness scale c is
adaptive by default: half the maximum spectral norm of the Hessian over the
field, recomputed at every scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scalespace import HessianField, eigen_sym2, hessian_field

__all__ = [
    "FrangiParams",
    "structuredness_threshold",
    "frangi_response",
    "frangi_response_from_hessian",
]


@dataclass(frozen=True)
class FrangiParams:
    """Knobs of the vesselness measure.

    alpha is not used by the response itself; it parameterizes the
    width-to-scale rule for callers that select sigma from a target vessel
    thickness.  c_absolute, when set, pins the structuredness scale c to a
    fixed value instead of the adaptive per-scale half-max rule; useful when
    responses must be comparable across scales on the same field.
    """

    beta: float = 0.5
    c_factor: float = 0.5
    alpha: float = 0.9
    c_absolute: float | None = None

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if self.c_factor <= 0:
            raise ValueError(f"c_factor must be positive, got {self.c_factor!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha!r}")
        if self.c_absolute is not None and self.c_absolute <= 0:
            raise ValueError(
                f"c_absolute must be positive when set, got {self.c_absolute!r}"
            )


def structuredness_threshold(hessian: HessianField, c_factor: float = 0.5) -> float:
    """Adaptive c: c_factor times the max spectral norm of the Hessian."""
    lam1, lam2 = eigen_sym2(hessian.h11, hessian.h12, hessian.h22)
    spectral = np.maximum(np.abs(lam1), np.abs(lam2))
    return float(c_factor * spectral.max())


def frangi_response_from_hessian(
    hessian: HessianField, params: FrangiParams = FrangiParams()
) -> np.ndarray:
    """Vesselness of a precomputed Hessian field, in [0, 1]."""
    lam1, lam2 = eigen_sym2(hessian.h11, hessian.h12, hessian.h22)
    if params.c_absolute is not None:
        c = float(params.c_absolute)
    else:
        c = params.c_factor * float(np.max(np.maximum(np.abs(lam1), np.abs(lam2))))
    if c == 0.0:
        # Flat field: no structure anywhere, response defined as zero.
        return np.zeros(lam1.shape, dtype=float)
    blob_ratio_sq = np.zeros(lam1.shape, dtype=float)
    nonzero = lam2 != 0.0
    blob_ratio_sq[nonzero] = (lam1[nonzero] / lam2[nonzero]) ** 2
    structure_sq = lam1 * lam1 + lam2 * lam2
    response = np.exp(-blob_ratio_sq / (2.0 * params.beta**2)) * (
        -np.expm1(-structure_sq / (2.0 * c * c))
    )
    response[lam2 > 0.0] = 0.0
    return response


def frangi_response(
    field: np.ndarray, sigma: float, params: FrangiParams = FrangiParams()
) -> np.ndarray:
    """Vesselness of a scalar field at scale sigma."""
    field = np.asarray(field, dtype=float)
    if field.size and float(field.min()) == float(field.max()):
        # A constant field has no structure at any scale.  Detecting it up
        # front keeps roundoff-sized Hessian residue from being renormalized
        # into spurious responses by the adaptive structuredness scale.
        return np.zeros(field.shape, dtype=float)
    return frangi_response_from_hessian(hessian_field(field, sigma), params)
