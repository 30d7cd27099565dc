# feedflow/models/panel.py
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from feedflow.core.errors import DataError, DomainError

# Configure logging
logger = logging.getLogger(__name__)

LATENT_LABEL = "w"

StationKey = Union[int, str]


@dataclass(frozen=True, eq=False)
class FeedPanel:
    """Station fills and the differences they induce, with the latent station as the last row.

    ``fills`` and ``previous_fills`` are C_{i,t} and C_{i,t-1} for every
    timepoint in the panel; missing values are NaN. ``differences`` has one
    more row than there are stations: row N is the latent station w, whose
    difference balances the observed stations at each timepoint.
    """

    station_ids: Tuple[str, ...]
    timepoints: pd.Index
    differences: NDArray[np.float64] = field(repr=False)
    fills: Optional[NDArray[np.float64]] = field(default=None, repr=False)
    previous_fills: Optional[NDArray[np.float64]] = field(default=None, repr=False)

    def __post_init__(self):
        n, t = self.n_stations, self.n_times
        if self.differences.shape != (n + 1, t):
            raise DataError(f"Differences must have shape {(n + 1, t)}, got {self.differences.shape}")
        if len(set(self.station_ids)) != n:
            raise DataError("Station ids must be unique")
        if LATENT_LABEL in self.station_ids:
            raise DataError(f"'{LATENT_LABEL}' is reserved for the latent station")
        observed = self.differences[np.isfinite(self.differences)]
        if np.any(observed != np.round(observed)):
            raise DataError("Differences must be integers")

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    @property
    def n_times(self) -> int:
        return len(self.timepoints)

    @property
    def latent_index(self) -> int:
        return self.n_stations

    @property
    def unit_labels(self) -> Tuple[str, ...]:
        return self.station_ids + (LATENT_LABEL,)

    @property
    def observed(self) -> NDArray[np.bool_]:
        """Mask of cells whose difference enters the likelihood."""
        return np.isfinite(self.differences)

    @property
    def n_missing(self) -> int:
        return int((~self.observed[: self.n_stations]).sum())

    def index_of(self, station: StationKey) -> int:
        """Row index of a station id, a row number, or the latent label ``"w"``."""
        return resolve_unit(station, self.n_stations, self.station_ids)

    @classmethod
    def from_fills(
        cls,
        station_ids: Sequence[str],
        timepoints: Union[pd.Index, Sequence],
        fills: ArrayLike,
        previous_fills: ArrayLike,
    ) -> "FeedPanel":
        """Build a panel from C_{i,t} and C_{i,t-1}, both shaped (N, T) with NaN for missing."""
        current = np.asarray(fills, dtype=float)
        previous = np.asarray(previous_fills, dtype=float)
        if current.shape != previous.shape:
            raise DataError(f"Fill arrays disagree in shape: {current.shape} vs {previous.shape}")
        station_d = current - previous
        return cls(
            station_ids=tuple(str(s) for s in station_ids),
            timepoints=pd.Index(timepoints),
            differences=with_latent_row(station_d),
            fills=current,
            previous_fills=previous,
        )

    @classmethod
    def from_series(
        cls, station_ids: Sequence[str], timepoints: Union[pd.Index, Sequence], series: ArrayLike
    ) -> "FeedPanel":
        """Build a panel from a consecutive fill series C with shape (N, T + 1)."""
        c = np.asarray(series, dtype=float)
        if c.ndim != 2 or c.shape[1] != len(timepoints) + 1:
            raise DataError(f"Fill series needs shape (N, {len(timepoints) + 1}), got {c.shape}")
        return cls.from_fills(station_ids, timepoints, c[:, 1:], c[:, :-1])

    @classmethod
    def from_differences(
        cls, station_ids: Sequence[str], timepoints: Union[pd.Index, Sequence], differences: ArrayLike
    ) -> "FeedPanel":
        """Build a panel from station differences (N, T); the latent row is added by conservation."""
        station_d = np.asarray(differences, dtype=float)
        return cls(
            station_ids=tuple(str(s) for s in station_ids),
            timepoints=pd.Index(timepoints),
            differences=with_latent_row(station_d),
        )


def with_latent_row(station_differences: NDArray[np.float64]) -> NDArray[np.float64]:
    """Append D_w = -sum_i D_i over the observed stations of each timepoint.

    A timepoint without any observed station leaves D_w missing as well.
    """
    if station_differences.ndim != 2:
        raise DataError(f"Differences must be a matrix, got {station_differences.ndim} dimensions")
    observed = np.isfinite(station_differences)
    latent = -np.where(observed, station_differences, 0.0).sum(axis=0)
    latent[~observed.any(axis=0)] = np.nan
    return np.vstack([station_differences, latent[None, :]])


def resolve_unit(station: StationKey, n_stations: int, station_ids: Optional[Sequence[str]] = None) -> int:
    """Map a station key onto its row in 0..N, where N is the latent station.

    Raises:
        DomainError: If the key names no station.
    """
    if isinstance(station, str):
        if station == LATENT_LABEL:
            return n_stations
        if station_ids is not None and station in station_ids:
            return list(station_ids).index(station)
        raise DomainError(f"Unknown station '{station}'")
    index = int(station)
    if not 0 <= index <= n_stations:
        raise DomainError(f"Station index {index} outside 0..{n_stations}")
    return index
