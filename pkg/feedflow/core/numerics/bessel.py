# feedflow/core/numerics/bessel.py
"""
Log-domain evaluation of the modified Bessel function of the first kind.

The primary path sums the power series

.. math::
    I_d(\\theta) = \\sum_{k \\ge 0} \\frac{(\\theta/2)^{d+2k}}{k!\\,(d+k)!}

as a running log-sum-exp, so it neither overflows nor underflows for any finite
argument. Only when the series needs more than ``max_terms`` terms do we fall back
to the Amos (1974) bounds, anchored at a reference argument that is still on the
series path.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln

from feedflow.core.errors import DomainError

# Configure logging
logger = logging.getLogger(__name__)

# A new term this far below the running maximum no longer changes the sum in double precision.
LOG_TERM_GAP = 36.0
MAX_SERIES_TERMS = 1_000_000
# Largest argument for which the linear-domain series is still finite in double precision.
THETA_TILDE = 705.0

_INITIAL_BLOCK = 32
_MAX_BLOCK = 4096


class BesselMethod(str, Enum):
    """Evaluation path used for a Bessel value."""

    SERIES = "series"
    AMOS_BOUNDS = "amos_bounds"


@dataclass(frozen=True)
class BesselEval:
    """A single evaluation of log I_d(theta) together with the path that produced it."""

    order: int
    theta: float
    log_value: float
    method: BesselMethod


def _as_domain(order: ArrayLike, theta: ArrayLike) -> Tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Validate and broadcast orders and arguments.

    Raises:
        DomainError: If an order is negative or not integral, or an argument is negative or not finite.
    """
    order_arr = np.asarray(order)
    theta_arr = np.asarray(theta, dtype=float)
    if order_arr.dtype.kind == "f":
        if not np.all(np.isfinite(order_arr)) or np.any(order_arr != np.round(order_arr)):
            raise DomainError("Bessel order must be a non-negative integer")
    elif order_arr.dtype.kind not in "iu":
        raise DomainError(f"Bessel order must be an integer, got dtype {order_arr.dtype}")
    order_arr = order_arr.astype(np.int64)
    if np.any(order_arr < 0):
        raise DomainError(f"Bessel order must be non-negative, got {order_arr.min()}")
    if not np.all(np.isfinite(theta_arr)):
        raise DomainError("Bessel argument must be finite")
    if np.any(theta_arr < 0):
        raise DomainError(f"Bessel argument must be non-negative, got {theta_arr.min()}")
    order_arr, theta_arr = np.broadcast_arrays(order_arr, theta_arr)
    return order_arr.ravel().copy(), theta_arr.ravel().copy()


def _log_series(
    orders: NDArray[np.int64],
    theta: NDArray[np.float64],
    shifts: Sequence[int] = (0,),
    max_terms: int = MAX_SERIES_TERMS,
) -> Tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Sum the log-domain series for I_{n+s}(theta) for every shift s.

    All arguments must be strictly positive. Terms are added in blocks of growing
    size; a cell stops once, for every shift, the newest term is decreasing and
    LOG_TERM_GAP log-units below the running maximum.

    Returns:
        Tuple of (log values with shape (len(shifts), n_cells), mask of cells that
        terminated within max_terms).
    """
    n_cells = theta.shape[0]
    n_shifts = len(shifts)
    running_max = np.full((n_shifts, n_cells), -np.inf)
    running_sum = np.zeros((n_shifts, n_cells))
    converged = np.ones(n_cells, dtype=bool)
    if n_cells == 0:
        return running_max, converged

    half_log = np.log(theta / 2.0)
    active = np.arange(n_cells)
    k_start = 0
    block = _INITIAL_BLOCK

    while active.size:
        if k_start >= max_terms:
            converged[active] = False
            break
        ks = np.arange(k_start, min(k_start + block, max_terms), dtype=float)
        h = half_log[active][:, None]
        n = orders[active][:, None].astype(float)
        base = 2.0 * ks * h - gammaln(ks + 1.0)
        finished = np.ones(active.size, dtype=bool)

        for s_idx, shift in enumerate(shifts):
            order_s = n + shift
            terms = order_s * h + base - gammaln(order_s + ks + 1.0)
            old_max = running_max[s_idx, active]
            new_max = np.maximum(old_max, terms.max(axis=1))
            rescale = np.where(np.isneginf(old_max), 0.0, np.exp(old_max - new_max))
            running_sum[s_idx, active] = (
                running_sum[s_idx, active] * rescale + np.exp(terms - new_max[:, None]).sum(axis=1)
            )
            running_max[s_idx, active] = new_max

            last = terms[:, -1]
            falling = last < terms[:, -2] if ks.size > 1 else np.ones(active.size, dtype=bool)
            finished &= falling & (last < new_max - LOG_TERM_GAP)

        active = active[~finished]
        k_start += ks.size
        block = min(2 * block, _MAX_BLOCK)

    return running_max + np.log(running_sum), converged


def bessel_ratio_bounds(order: ArrayLike, theta: ArrayLike) -> Tuple[NDArray, NDArray]:
    """Amos bounds on I_{d+1}(theta) / I_d(theta).

    Returns:
        Tuple of (lower, upper), both within [0, 1].
    """
    n, x = _as_domain(order, theta)
    a = n + 1.5
    b = n + 0.5
    lower = x / (b + np.sqrt(x * x + a * a))
    upper = x / (b + np.sqrt(x * x + b * b))
    return lower, upper


def _amos_log_bounds(
    n: NDArray, x: NDArray, x_tilde: NDArray, log_i_tilde: NDArray
) -> Tuple[NDArray, NDArray]:
    a = n + 1.5
    b = n + 0.5
    sq_a, sq_a_tilde = np.sqrt(x * x + a * a), np.sqrt(x_tilde * x_tilde + a * a)
    sq_b, sq_b_tilde = np.sqrt(x * x + b * b), np.sqrt(x_tilde * x_tilde + b * b)
    common = n * (np.log(x) - np.log(x_tilde)) + log_i_tilde
    dx2 = x * x - x_tilde * x_tilde
    log_lower = common + dx2 / (sq_a + sq_a_tilde) + b * (np.log(b + sq_a_tilde) - np.log(b + sq_a))
    log_upper = common + dx2 / (sq_b + sq_b_tilde) + b * (np.log(b + sq_b_tilde) - np.log(b + sq_b))
    return log_lower, log_upper


def amos_log_bounds(order: ArrayLike, theta: ArrayLike, theta_tilde: ArrayLike) -> Tuple[NDArray, NDArray]:
    """Log of the lower and upper Amos bounds L, U on I_d(theta).

    The anchor value I_d(theta_tilde) is taken from the series path.

    Args:
        order: Bessel order(s) d.
        theta: Argument(s), strictly positive.
        theta_tilde: Anchor argument(s) with 0 < theta_tilde <= theta.

    Returns:
        Tuple of (log L, log U).
    """
    n, x = _as_domain(order, theta)
    x_tilde = np.broadcast_to(np.asarray(theta_tilde, dtype=float), x.shape).ravel().copy()
    if np.any(x_tilde <= 0) or np.any(x_tilde > x):
        raise DomainError("Amos bounds need 0 < theta_tilde <= theta")
    log_i_tilde, ok = _log_series(n, x_tilde)
    if not np.all(ok):
        raise DomainError("Anchor argument theta_tilde is not on the series path")
    return _amos_log_bounds(n.astype(float), x, x_tilde, log_i_tilde[0])


def _fallback_log_values(n: NDArray, x: NDArray) -> NDArray:
    x_tilde = np.minimum(THETA_TILDE, x)
    log_i_tilde, _ = _log_series(n, x_tilde)
    log_lower, log_upper = _amos_log_bounds(n.astype(float), x, x_tilde, log_i_tilde[0])
    return 0.5 * (log_lower + log_upper)


def _mid_ratio(n: NDArray, x: NDArray) -> NDArray:
    lower, upper = bessel_ratio_bounds(n, x)
    return 0.5 * (lower + upper)


def bessel_log_and_ratios(
    order: ArrayLike, theta: ArrayLike, max_terms: int = MAX_SERIES_TERMS
) -> Tuple[NDArray, NDArray, NDArray, NDArray]:
    """Vectorised log I_d(theta), I_{d+1}/I_d and I_{d+2}/I_d.

    Args:
        order: Bessel order(s).
        theta: Argument(s).
        max_terms: Series term cap before switching to the Amos bounds.

    Returns:
        Tuple of flat arrays (log_value, ratio1, ratio2, on_series_path).
    """
    n, x = _as_domain(order, theta)
    log_value = np.empty(x.shape)
    ratio1 = np.zeros(x.shape)
    ratio2 = np.zeros(x.shape)
    on_series = np.ones(x.shape, dtype=bool)

    # I_d(0) is 1 for d = 0 and 0 otherwise; both ratios vanish.
    zero = x == 0.0
    log_value[zero] = np.where(n[zero] == 0, 0.0, -np.inf)

    positive = np.flatnonzero(~zero)
    if positive.size:
        logs, ok = _log_series(n[positive], x[positive], shifts=(0, 1, 2), max_terms=max_terms)
        log_value[positive] = logs[0]
        ratio1[positive] = np.exp(logs[1] - logs[0])
        ratio2[positive] = np.exp(logs[2] - logs[0])

        if not np.all(ok):
            slow = positive[~ok]
            logger.warning(f"Series exceeded {max_terms} terms for {slow.size} cells, using Amos bounds")
            on_series[slow] = False
            log_value[slow] = _fallback_log_values(n[slow], x[slow])
            first = _mid_ratio(n[slow], x[slow])
            ratio1[slow] = first
            ratio2[slow] = first * _mid_ratio(n[slow] + 1, x[slow])

    np.clip(ratio1, 0.0, 1.0, out=ratio1)
    np.clip(ratio2, 0.0, 1.0, out=ratio2)
    return log_value, ratio1, ratio2, on_series


def evaluate_log_bessel(d: int, theta: float, max_terms: int = MAX_SERIES_TERMS) -> BesselEval:
    """Evaluate log I_d(theta) and report the evaluation path."""
    log_value, _, _, on_series = bessel_log_and_ratios(d, theta, max_terms=max_terms)
    method = BesselMethod.SERIES if on_series[0] else BesselMethod.AMOS_BOUNDS
    return BesselEval(order=int(d), theta=float(theta), log_value=float(log_value[0]), method=method)


def log_bessel_i(d: int, theta: float, max_terms: int = MAX_SERIES_TERMS) -> float:
    """Natural log of I_d(theta); negative infinity for theta = 0 and d > 0.

    Raises:
        DomainError: If d < 0 or theta < 0.
    """
    return evaluate_log_bessel(d, theta, max_terms=max_terms).log_value


def bessel_ratio(d: int, theta: float, max_terms: int = MAX_SERIES_TERMS) -> float:
    """I_{d+1}(theta) / I_d(theta), exact on the series path, Amos mid-bound otherwise."""
    _, ratio1, _, _ = bessel_log_and_ratios(d, theta, max_terms=max_terms)
    return float(ratio1[0])


def bessel_ratio2(d: int, theta: float, max_terms: int = MAX_SERIES_TERMS) -> float:
    """I_{d+2}(theta) / I_d(theta), exact on the series path, product of mid-bounds otherwise."""
    _, _, ratio2, _ = bessel_log_and_ratios(d, theta, max_terms=max_terms)
    return float(ratio2[0])
