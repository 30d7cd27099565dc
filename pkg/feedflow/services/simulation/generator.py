# feedflow/services/simulation/generator.py
"""
Synthetic bike networks with known flows.

For one fixed hour of day and T days, trips Y_{ij,t} ~ Poi(mu_{ij,t}) with

    log mu_{ij,t} = beta_0 + beta_1 z_t + beta_2 z_{ij} + u_out_i + u_in_j

where z_t and the symmetric z_{ij} are standard normal and u_i ~ N(0, Sigma).
Trips of the preceding hour are Poisson with intensity prev_scale * mu.

Bookkeeping of the difference D_{i,t} over the interval [t-1, t):

- every departure from i during the interval counts against i
- a departure arrives within the interval with probability 1 - p and then
  counts for its destination; otherwise it arrives after t
- a trip of the preceding hour is still on the road with probability p and
  then arrives at its destination within the interval

with p the carry-over probability. The latent difference D_w balances the
stations, so each column of the panel sums to zero.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from feedflow.core.config import ScenarioConfig, SimConfig
from feedflow.models.covariates import CovariateSet, LinearTerm
from feedflow.models.panel import FeedPanel

# Configure logging
logger = logging.getLogger(__name__)

TIME_COVARIATE = "z_time"
DYADIC_COVARIATE = "z_dyad"
DEFAULT_START = "2024-01-01"


@dataclass(frozen=True, eq=False)
class SimTruth:
    """True parameters and intensities of one replication."""

    beta: NDArray[np.float64]
    sigma: NDArray[np.float64]
    u: NDArray[np.float64]
    z_time: NDArray[np.float64]
    z_dyad: NDArray[np.float64]
    mu: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class SimReplication:
    """Draws of one replication and the panel the model sees."""

    scenario: str
    replication: int
    truth: SimTruth
    trips: NDArray[np.int64]
    prev_trips: NDArray[np.int64]
    arrived: NDArray[np.int64]
    carried: NDArray[np.int64]
    panel: FeedPanel

    @property
    def station_ids(self) -> Tuple[str, ...]:
        return self.panel.station_ids

    def covariates(self) -> CovariateSet:
        n, t = self.panel.n_stations, self.panel.n_times
        return CovariateSet(
            n,
            t,
            linear=[
                LinearTerm(TIME_COVARIATE, "time", self.truth.z_time),
                LinearTerm(DYADIC_COVARIATE, "dyadic", self.truth.z_dyad),
            ],
        )

    def feeds_frame(self) -> pd.DataFrame:
        """Feed rows for the fill before and after each interval, ordered by station then time."""
        panel = self.panel
        current = pd.DatetimeIndex(panel.timepoints)
        stamps = current.append(current - pd.Timedelta(hours=1))
        fills = np.concatenate([panel.fills, panel.previous_fills], axis=1)
        frame = pd.DataFrame(
            {
                "station_id": np.repeat(panel.station_ids, stamps.size),
                "timestamp": stamps[np.tile(np.arange(stamps.size), panel.n_stations)],
                "fill": fills.ravel(),
            }
        )
        return frame.sort_values(["station_id", "timestamp"], kind="mergesort").reset_index(drop=True)

    def covariates_frame(self) -> pd.DataFrame:
        """Covariate rows in the ingestion format."""
        ids = self.panel.station_ids
        n = len(ids)
        stamps = pd.DatetimeIndex(self.panel.timepoints).strftime("%Y-%m-%dT%H:%M:%SZ")
        time_rows = pd.DataFrame(
            {"scope": "time", "name": TIME_COVARIATE, "timestamp": stamps, "value": self.truth.z_time}
        )
        origin, destination = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        dyad_rows = pd.DataFrame(
            {
                "scope": "dyadic",
                "name": DYADIC_COVARIATE,
                "station_id": np.asarray(ids)[origin.ravel()],
                "destination_id": np.asarray(ids)[destination.ravel()],
                "value": self.truth.z_dyad.ravel(),
            }
        )
        columns = ["scope", "name", "timestamp", "station_id", "destination_id", "value"]
        return pd.concat([time_rows, dyad_rows], ignore_index=True).reindex(columns=columns).fillna("")


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent stream per replication, reproducible from (seed, replication)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


def station_labels(n: int) -> Tuple[str, ...]:
    width = max(3, len(str(n)))
    return tuple(f"s{i:0{width}d}" for i in range(1, n + 1))


def generate(cfg: SimConfig, scenario: ScenarioConfig, replication: int, hour: int = 18) -> SimReplication:
    """Draw one replication of a scenario.

    Args:
        cfg: Simulation design.
        scenario: True fixed effects (intercept, time effect, dyadic effect).
        replication: Replication index; selects the random stream.
        hour: Hour of day the timepoints are stamped with.
    """
    rng = replication_rng(cfg.seed, replication)
    n, t = cfg.n_stations, cfg.t_len
    beta = np.asarray(scenario.beta, dtype=float)
    sigma = np.asarray(cfg.sigma_true, dtype=float)

    z_time = rng.standard_normal(t)
    upper = np.triu(rng.standard_normal((n, n)))
    z_dyad = upper + np.triu(upper, 1).T
    u = rng.multivariate_normal(np.zeros(2), sigma, size=n)

    eta = beta[0] + beta[1] * z_time[None, None, :] + beta[2] * z_dyad[:, :, None]
    eta = eta + u[:, 0][:, None, None] + u[:, 1][None, :, None]
    mu = np.exp(eta)

    trips = rng.poisson(mu)
    prev_trips = rng.poisson(cfg.prev_scale * mu)
    arrived = rng.binomial(trips, 1.0 - cfg.carryover_prob)
    carried = rng.binomial(prev_trips, cfg.carryover_prob)

    differences = arrived.sum(axis=0) + carried.sum(axis=0) - trips.sum(axis=1)
    # Each station starts high enough that no fill goes negative.
    start = np.maximum(cfg.initial_fill, -differences.min(axis=1))
    previous = np.repeat(start[:, None], t, axis=1).astype(float)
    current = previous + differences

    days = pd.date_range(DEFAULT_START, periods=t, freq="D", tz="UTC") + pd.Timedelta(hours=hour % 24)
    panel = FeedPanel.from_fills(station_labels(n), days, current, previous)
    logger.debug(
        f"Scenario {scenario.name}, replication {replication}: {int(trips.sum())} trips, "
        f"{int(carried.sum())} carried over"
    )
    return SimReplication(
        scenario=scenario.name,
        replication=replication,
        truth=SimTruth(beta=beta, sigma=sigma, u=u, z_time=z_time, z_dyad=z_dyad, mu=mu),
        trips=trips,
        prev_trips=prev_trips,
        arrived=arrived,
        carried=carried,
        panel=panel,
    )
