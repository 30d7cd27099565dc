# feedflow/models/covariates.py
"""
Covariates of the linear predictor and their scopes.

Every term carries one of four scopes that fixes which index it varies over:

- ``time``: z_t, shared by all pairs at a timepoint
- ``station_out``: z_{i,t}, attached to the origin of a pair
- ``station_in``: z_{j,t}, attached to the destination of a pair
- ``dyadic``: z_{ij,t} (or time-invariant z_{ij})

Terms never contribute for a latent endpoint: station covariates of w and
dyadic covariates of pairs touching w are zero.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from feedflow.core.config import RunConfig
from feedflow.core.errors import ConfigError, DataError, DomainError
from feedflow.models.panel import StationKey, resolve_unit
from feedflow.models.splines import SmoothTermBasis, SmoothTermSpec, build_basis

# Configure logging
logger = logging.getLogger(__name__)

SCOPES = ("time", "station_out", "station_in", "dyadic")
INTERCEPT = "(Intercept)"


def distance_transform(dist: ArrayLike, alpha: float) -> NDArray[np.float64]:
    """f_alpha(dist) = dist**alpha * exp(-dist); maximal at dist = alpha.

    Raises:
        DomainError: If alpha is not positive or a distance is negative.
    """
    if not alpha > 0:
        raise DomainError(f"Distance transform needs alpha > 0, got {alpha}")
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0):
        raise DomainError("Distances must be non-negative")
    return np.power(d, alpha) * np.exp(-d)


def scope_shape(scope: str, n_stations: int, n_times: int) -> Tuple[int, ...]:
    if scope == "time":
        return (n_times,)
    if scope in ("station_out", "station_in"):
        return (n_stations, n_times)
    if scope == "dyadic":
        return (n_stations, n_stations, n_times)
    raise DomainError(f"Unknown covariate scope '{scope}'")


def _normalise(name: str, scope: str, values: ArrayLike, n_stations: int, n_times: int) -> NDArray[np.float64]:
    """Bring raw values into the canonical shape of their scope.

    Station covariates may be given per station only, dyadic ones per pair only;
    they are then held constant over time. Dyadic arrays keep a time axis of
    length 1 in that case.
    """
    arr = np.asarray(values, dtype=float)
    full = scope_shape(scope, n_stations, n_times)
    if scope in ("station_out", "station_in") and arr.shape == (n_stations,):
        arr = np.repeat(arr[:, None], n_times, axis=1)
    elif scope == "dyadic" and arr.shape == (n_stations, n_stations):
        arr = arr[:, :, None]
    if arr.shape != full and not (scope == "dyadic" and arr.shape == full[:2] + (1,)):
        raise DataError(f"Covariate '{name}' ({scope}) has shape {arr.shape}, expected {full}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"Covariate '{name}' ({scope}) contains missing or non-finite values")
    return arr


@dataclass
class CovariateTable:
    """Raw covariate values by scope and name, as read from a covariate file or simulated."""

    n_stations: int
    n_times: int
    time: Dict[str, NDArray[np.float64]] = field(default_factory=dict)
    station_out: Dict[str, NDArray[np.float64]] = field(default_factory=dict)
    station_in: Dict[str, NDArray[np.float64]] = field(default_factory=dict)
    dyadic: Dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def add(self, scope: str, name: str, values: ArrayLike) -> None:
        table = self._table(scope)
        if name in table:
            raise DataError(f"Covariate '{name}' given twice for scope {scope}")
        table[name] = _normalise(name, scope, values, self.n_stations, self.n_times)

    def get(self, scope: str, name: str) -> NDArray[np.float64]:
        table = self._table(scope)
        if name not in table:
            available = ", ".join(sorted(table)) or "none"
            raise ConfigError(f"Covariate '{name}' not found in scope {scope} (available: {available})")
        return table[name]

    def names(self, scope: str) -> List[str]:
        return sorted(self._table(scope))

    def _table(self, scope: str) -> Dict[str, NDArray[np.float64]]:
        if scope not in SCOPES:
            raise DomainError(f"Unknown covariate scope '{scope}'")
        return getattr(self, scope)


@dataclass(frozen=True)
class LinearTerm:
    name: str
    scope: str
    values: NDArray[np.float64] = field(repr=False)


@dataclass(frozen=True)
class SmoothTerm:
    name: str
    scope: str
    basis: SmoothTermBasis = field(repr=False)
    values: NDArray[np.float64] = field(repr=False)

    @property
    def num_basis(self) -> int:
        return self.basis.num_basis


class CovariateSet:
    """Linear and smooth terms of the linear predictor, in coefficient order."""

    def __init__(
        self,
        n_stations: int,
        n_times: int,
        linear: Sequence[LinearTerm] = (),
        smooth: Sequence[SmoothTerm] = (),
        intercept: bool = True,
    ):
        self.n_stations = n_stations
        self.n_times = n_times
        self.intercept = intercept
        self.linear: Tuple[LinearTerm, ...] = tuple(
            LinearTerm(t.name, t.scope, _normalise(t.name, t.scope, t.values, n_stations, n_times)) for t in linear
        )
        self.smooth: Tuple[SmoothTerm, ...] = tuple(
            SmoothTerm(t.name, t.scope, t.basis, _normalise(t.name, t.scope, t.values, n_stations, n_times))
            for t in smooth
        )

        names = [t.name for t in self.linear] + [t.name for t in self.smooth]
        if len(set(names)) != len(names):
            raise ConfigError(f"Duplicate covariate term names: {names}")

    @property
    def beta_names(self) -> List[str]:
        return ([INTERCEPT] if self.intercept else []) + [t.name for t in self.linear]

    @property
    def smooth_names(self) -> List[str]:
        return [t.name for t in self.smooth]

    @property
    def gamma_sizes(self) -> List[int]:
        return [t.num_basis for t in self.smooth]

    @property
    def has_dyadic(self) -> bool:
        return any(t.scope == "dyadic" for t in self.linear + self.smooth)

    def value(self, name: str, i: StationKey, j: StationKey, t: int) -> float:
        """Value of a term's covariate for the pair (i, j) at timepoint t.

        Latent endpoints read as zero for station and dyadic scopes.
        """
        term = self._term(name)
        row = resolve_unit(i, self.n_stations)
        col = resolve_unit(j, self.n_stations)
        latent = self.n_stations
        if term.scope == "time":
            return float(term.values[t])
        if term.scope == "station_out":
            return 0.0 if row == latent else float(term.values[row, t])
        if term.scope == "station_in":
            return 0.0 if col == latent else float(term.values[col, t])
        if row == latent or col == latent:
            return 0.0
        values = term.values
        return float(values[row, col, t if values.shape[2] > 1 else 0])

    def _term(self, name: str):
        for term in self.linear + self.smooth:
            if term.name == name:
                return term
        raise ConfigError(f"No covariate term named '{name}'")

    @classmethod
    def intercept_only(cls, n_stations: int, n_times: int) -> "CovariateSet":
        return cls(n_stations, n_times)


def build_covariates(table: CovariateTable, config: RunConfig) -> CovariateSet:
    """Resolve the configured terms against a raw covariate table.

    Args:
        table: Raw covariates.
        config: Run configuration naming the linear terms, smooth terms and the distance transform.

    Returns:
        CovariateSet with terms ordered as configured; the distance transform
        follows the other linear terms.

    Raises:
        ConfigError: If a referenced covariate is missing.
    """
    linear: List[LinearTerm] = []
    for term in config.linear:
        linear.append(LinearTerm(term.name, term.scope, table.get(term.scope, term.name)))

    transform = config.distance_transform
    if transform.enabled:
        dist = table.get("dyadic", transform.source)
        linear.append(LinearTerm(transform.term_name, "dyadic", distance_transform(dist, transform.alpha)))

    smooth: List[SmoothTerm] = []
    for term in config.smooth:
        values = table.get(term.scope, term.name)
        data = values.ravel()
        domain = term.domain or (float(data.min()), float(data.max()))
        if term.domain is None and not domain[0] < domain[1]:
            raise ConfigError(
                f"Smooth covariate '{term.name}' is constant ({domain[0]:g}); "
                f"give it a domain or model it as a linear term"
            )
        spec = SmoothTermSpec(name=term.name, num_basis=term.num_basis, kind=term.kind, domain=domain)
        smooth.append(SmoothTerm(term.name, term.scope, build_basis(spec, data), values))

    covs = CovariateSet(
        table.n_stations, table.n_times, linear=linear, smooth=smooth, intercept=config.intercept
    )
    logger.info(
        f"Covariates resolved: {len(covs.beta_names)} fixed effects, "
        f"{len(covs.smooth)} smooth terms ({sum(covs.gamma_sizes)} spline coefficients)"
    )
    return covs


def with_distance_alpha(config: RunConfig, alpha: Optional[float]) -> RunConfig:
    """Copy of a run configuration with the distance transform set to ``alpha``."""
    if alpha is None:
        return config
    transform = config.distance_transform.model_copy(update={"enabled": True, "alpha": alpha})
    return config.model_copy(update={"distance_transform": transform})
