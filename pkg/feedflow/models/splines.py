# feedflow/models/splines.py
"""
Penalised cubic B-spline bases for the smooth terms of the linear predictor.

Open bases use equidistant knots with three extra knots on either side of the
domain; cyclic bases fold the trailing basis functions onto the leading ones so
that the function and its first two derivatives agree at both ends of the
period. Columns are centred on the fitting data, which leaves the level of each
smooth to the intercept.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import BSpline

from feedflow.core.errors import DomainError

# Configure logging
logger = logging.getLogger(__name__)

DEGREE = 3
DEFAULT_NUM_BASIS = 10


@dataclass(frozen=True)
class SmoothTermSpec:
    """Specification of one smooth term s_m."""

    name: str
    num_basis: int = DEFAULT_NUM_BASIS
    kind: Literal["open", "cyclic"] = "open"
    domain: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.num_basis < DEGREE + 1:
            raise DomainError(f"Smooth term '{self.name}' needs at least 4 basis functions, got {self.num_basis}")
        if self.kind not in ("open", "cyclic"):
            raise DomainError(f"Unknown spline kind '{self.kind}' for term '{self.name}'")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise DomainError(f"Smooth term '{self.name}' needs a finite domain with lo < hi, got {self.domain}")

    @property
    def period(self) -> float:
        return self.domain[1] - self.domain[0]


@dataclass(frozen=True)
class SmoothTermBasis:
    """A constructed basis: knots, penalty K_m and the centring offsets."""

    spec: SmoothTermSpec
    knots: NDArray[np.float64]
    penalty: NDArray[np.float64] = field(repr=False)
    column_means: NDArray[np.float64] = field(repr=False)

    @property
    def num_basis(self) -> int:
        return self.spec.num_basis

    def raw_design(self, x: ArrayLike) -> NDArray[np.float64]:
        """Uncentred basis rows for a batch of inputs."""
        return _raw_design(self.spec, self.knots, np.asarray(x, dtype=float).ravel())

    def design(self, x: ArrayLike) -> NDArray[np.float64]:
        """Centred basis rows; output shape is x.shape + (k_m,)."""
        x_arr = np.asarray(x, dtype=float)
        rows = self.raw_design(x_arr) - self.column_means
        return rows.reshape(x_arr.shape + (self.num_basis,))


def _knots(spec: SmoothTermSpec) -> NDArray[np.float64]:
    lo, hi = spec.domain
    intervals = spec.num_basis - DEGREE if spec.kind == "open" else spec.num_basis
    # linspace pins the base interval to exactly [lo, hi]
    inner = np.linspace(lo, hi, intervals + 1)
    h = (hi - lo) / intervals
    pad = np.arange(1, DEGREE + 1) * h
    return np.concatenate([lo - pad[::-1], inner, hi + pad])


def _wrap(spec: SmoothTermSpec, x: NDArray[np.float64]) -> NDArray[np.float64]:
    lo = spec.domain[0]
    wrapped = lo + np.mod(x - lo, spec.period)
    # mod can return the period itself for inputs a rounding error below lo
    return np.where(wrapped >= spec.domain[1], lo, wrapped)


def _check_inside(spec: SmoothTermSpec, x: NDArray[np.float64]) -> None:
    lo, hi = spec.domain
    outside = (x < lo) | (x > hi) | ~np.isfinite(x)
    if np.any(outside):
        value = x[np.flatnonzero(outside)[0]]
        raise DomainError(f"Value {value} of smooth term '{spec.name}' lies outside its domain [{lo}, {hi}]")


def _raw_design(spec: SmoothTermSpec, knots: NDArray[np.float64], x: NDArray[np.float64]) -> NDArray[np.float64]:
    k = spec.num_basis
    if spec.kind == "cyclic":
        x = _wrap(spec, x)
    else:
        _check_inside(spec, x)
    if x.size == 0:
        return np.zeros((0, k))
    rows = BSpline.design_matrix(x, knots, DEGREE).toarray()
    if spec.kind == "cyclic":
        folded = rows[:, :k].copy()
        folded[:, :DEGREE] += rows[:, k:]
        rows = folded
    return rows


def difference_penalty(num_basis: int, kind: str = "open") -> NDArray[np.float64]:
    """Second-order difference penalty D2^T D2, with wrap-around rows for cyclic bases."""
    if kind == "cyclic":
        eye = np.eye(num_basis)
        d2 = np.roll(eye, -1, axis=1) - 2.0 * eye + np.roll(eye, 1, axis=1)
    else:
        d2 = np.diff(np.eye(num_basis), 2, axis=0)
    return d2.T @ d2


def build_basis(spec: SmoothTermSpec, data: ArrayLike) -> SmoothTermBasis:
    """Construct the basis of a smooth term and centre it on ``data``.

    Args:
        spec: Term specification.
        data: Covariate values the model is fitted on.

    Returns:
        SmoothTermBasis with equidistant knots over the domain.

    Raises:
        DomainError: If data is empty or a value lies outside the domain.
    """
    values = np.asarray(data, dtype=float).ravel()
    if values.size == 0:
        raise DomainError(f"Smooth term '{spec.name}' needs at least one data value")
    _check_inside(spec, values)

    knots = _knots(spec)
    column_means = _raw_design(spec, knots, values).mean(axis=0)
    basis = SmoothTermBasis(
        spec=spec,
        knots=knots,
        penalty=difference_penalty(spec.num_basis, spec.kind),
        column_means=column_means,
    )
    logger.debug(f"Built {spec.kind} basis for '{spec.name}' with {spec.num_basis} functions on {spec.domain}")
    return basis


def evaluate_row(basis: SmoothTermBasis, x: float) -> NDArray[np.float64]:
    """Centred basis row at a single input."""
    return basis.design(np.asarray([x], dtype=float))[0]


def penalty(basis: SmoothTermBasis) -> NDArray[np.float64]:
    return basis.penalty.copy()


def quadratic_penalty(basis: SmoothTermBasis, gamma: ArrayLike, lam: float) -> float:
    """½ λ γᵀ K γ.

    Raises:
        DomainError: On a length mismatch or nonpositive λ.
    """
    coef = np.asarray(gamma, dtype=float).ravel()
    if coef.shape[0] != basis.num_basis:
        raise DomainError(f"Term '{basis.spec.name}' has {basis.num_basis} coefficients, got {coef.shape[0]}")
    if not lam > 0:
        raise DomainError(f"Smoothing parameter must be positive, got {lam}")
    return 0.5 * lam * float(coef @ basis.penalty @ coef)
