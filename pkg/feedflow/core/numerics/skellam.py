# feedflow/core/numerics/skellam.py
"""
Skellam log-pmf and its derivatives in the two Poisson intensities.

For D = X - Y with X ~ Poi(theta1), Y ~ Poi(theta2):

.. math::
    \\log P(D = d) = -\\theta_1 - \\theta_2 + \\frac{d}{2}\\log\\frac{\\theta_1}{\\theta_2}
        + \\log I_{|d|}(2\\sqrt{\\theta_1\\theta_2})

Derivatives are written in terms of R1 = I_{n+1}/I_n and R2 = I_{n+2}/I_n with
n = |d|, which keeps every expression finite for large arguments.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from feedflow.core.errors import DomainError
from feedflow.core.numerics.bessel import MAX_SERIES_TERMS, bessel_log_and_ratios

# Configure logging
logger = logging.getLogger(__name__)

Real = Union[float, NDArray[np.float64]]


@dataclass(frozen=True)
class SkellamParams:
    """Intensities of a Skellam law: theta1 for the incoming, theta2 for the outgoing count."""

    theta1: float
    theta2: float

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"Skellam parameter {name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class SkellamDerivs:
    """Log-likelihood contribution with first and second partial derivatives.

    The cross derivative is stored once; it serves both mixed orders.
    """

    ll: Real
    d_theta1: Real
    d_theta2: Real
    d2_theta1: Real
    d2_theta2: Real
    d2_cross: Real


def _prepare(theta1: ArrayLike, theta2: ArrayLike, d: ArrayLike):
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    d_arr = np.asarray(d)
    if d_arr.dtype.kind == "f":
        if np.any(d_arr != np.round(d_arr)):
            raise DomainError("Skellam support is the integers")
        d_arr = d_arr.astype(np.int64)
    if np.any(~np.isfinite(t1)) or np.any(t1 <= 0) or np.any(~np.isfinite(t2)) or np.any(t2 <= 0):
        raise DomainError("Skellam intensities must be positive and finite")
    t1, t2, d_arr = np.broadcast_arrays(t1, t2, d_arr)
    shape = t1.shape
    t1, t2, d_arr = t1.ravel(), t2.ravel(), d_arr.ravel().astype(np.int64)
    order = np.abs(d_arr)
    z = 2.0 * np.sqrt(t1 * t2)
    return shape, t1, t2, d_arr.astype(float), order, z


def skellam_logpmf_array(
    theta1: ArrayLike, theta2: ArrayLike, d: ArrayLike, max_terms: int = MAX_SERIES_TERMS
) -> NDArray[np.float64]:
    """Vectorised Skellam log-pmf with broadcasting over all three arguments."""
    shape, t1, t2, dd, order, z = _prepare(theta1, theta2, d)
    log_i, _, _, _ = bessel_log_and_ratios(order, z, max_terms=max_terms)
    ll = -t1 - t2 + 0.5 * dd * (np.log(t1) - np.log(t2)) + log_i
    return ll.reshape(shape)


def skellam_derivs_array(
    theta1: ArrayLike, theta2: ArrayLike, d: ArrayLike, max_terms: int = MAX_SERIES_TERMS
) -> SkellamDerivs:
    """Vectorised log-pmf, gradient and Hessian entries in (theta1, theta2).

    Returns:
        SkellamDerivs whose fields are arrays shaped like the broadcast inputs.
    """
    shape, t1, t2, dd, order, z = _prepare(theta1, theta2, d)
    n = order.astype(float)
    log_i, r1, r2, _ = bessel_log_and_ratios(order, z, max_terms=max_terms)

    ll = -t1 - t2 + 0.5 * dd * (np.log(t1) - np.log(t2)) + log_i
    root21 = np.sqrt(t2 / t1)
    root12 = np.sqrt(t1 / t2)
    d_theta1 = -1.0 + (dd + n) / (2.0 * t1) + root21 * r1
    d_theta2 = -1.0 + (n - dd) / (2.0 * t2) + root12 * r1

    spread = r2 - r1 * r1
    # R1 / z tends to 1 / (2(n + 1)) as z -> 0.
    r1_over_z = np.divide(r1, z, out=1.0 / (2.0 * (n + 1.0)), where=z > 0)
    d2_theta1 = -(dd + n) / (2.0 * t1 * t1) + (t2 / t1) * spread
    d2_theta2 = -(n - dd) / (2.0 * t2 * t2) + (t1 / t2) * spread
    d2_cross = spread + 2.0 * r1_over_z

    return SkellamDerivs(
        ll=ll.reshape(shape),
        d_theta1=d_theta1.reshape(shape),
        d_theta2=d_theta2.reshape(shape),
        d2_theta1=d2_theta1.reshape(shape),
        d2_theta2=d2_theta2.reshape(shape),
        d2_cross=d2_cross.reshape(shape),
    )


def skellam_logpmf(p: SkellamParams, d: int) -> float:
    """log P(D = d) for D ~ Skellam(p.theta1, p.theta2)."""
    return float(skellam_logpmf_array(p.theta1, p.theta2, d)[()])


def skellam_derivs(p: SkellamParams, d: int) -> SkellamDerivs:
    """Scalar log-pmf with its first and second partial derivatives."""
    arrays = skellam_derivs_array(p.theta1, p.theta2, d)
    return SkellamDerivs(
        ll=float(arrays.ll[()]),
        d_theta1=float(arrays.d_theta1[()]),
        d_theta2=float(arrays.d_theta2[()]),
        d2_theta1=float(arrays.d2_theta1[()]),
        d2_theta2=float(arrays.d2_theta2[()]),
        d2_cross=float(arrays.d2_cross[()]),
    )
