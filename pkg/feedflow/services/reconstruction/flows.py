# feedflow/services/reconstruction/flows.py
"""
Origin-destination flows from fitted intensities, and their evaluation.

Departures that leave the hourly interval (the pairs i -> w) are spread over
the physical destinations in proportion to the same-interval intensities:

    pi_{ij,t} = nu_{ij,t} / Σ_j nu_{ij,t}
    mu_{ij,t} = nu_{ij,t} + nu_{iw,t} pi_{ij,t}

Arrivals from the latent station (w -> j) are not reallocated to origins.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from feedflow.core.errors import DataError, NumericalError
from feedflow.models.base import IntensityField
from feedflow.processors.feeds.writer import format_timestamps, write_csv

# Configure logging
logger = logging.getLogger(__name__)

# Cells with a smaller estimate are left out of station-mean relative errors.
MIN_ESTIMATE = 1e-8


@dataclass(frozen=True, eq=False)
class FlowEstimate:
    """Reconstructed flows mu_hat (N, N, T) and allocation shares pi_hat over physical stations.

    ``mu_in_model`` is the fitted incoming margin of each station, which also
    counts arrivals from the latent station.
    """

    station_ids: Tuple[str, ...]
    timepoints: Any
    mu_hat: NDArray[np.float64]
    pi_hat: NDArray[np.float64]
    mu_in_model: NDArray[np.float64]

    @property
    def n_stations(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def out_margin(self) -> NDArray[np.float64]:
        """mu_hat_{i., t}, shape (N, T)."""
        return self.mu_hat.sum(axis=1)

    @property
    def in_margin(self) -> NDArray[np.float64]:
        """mu_hat_{.j, t}, shape (N, T)."""
        return self.mu_hat.sum(axis=0)

    def estimated_differences(self) -> NDArray[np.float64]:
        """Expected station differences: fitted incoming margin minus reconstructed outflow."""
        return self.mu_in_model - self.out_margin

    def to_frame(self) -> pd.DataFrame:
        """Long table (origin, destination, timestamp, mu_hat, pi_hat), ordered by origin, destination, time."""
        n, _, t = self.mu_hat.shape
        ids = np.asarray(self.station_ids, dtype=object)
        stamps = np.asarray(self.timestamps(), dtype=object)
        origin, destination, time = np.meshgrid(np.arange(n), np.arange(n), np.arange(t), indexing="ij")
        return pd.DataFrame(
            {
                "origin": ids[origin.ravel()],
                "destination": ids[destination.ravel()],
                "timestamp": stamps[time.ravel()],
                "mu_hat": self.mu_hat.ravel(),
                "pi_hat": self.pi_hat.ravel(),
            }
        )

    def timestamps(self) -> List[str]:
        if self.timepoints is None:
            return [str(t) for t in range(self.mu_hat.shape[2])]
        return format_timestamps(self.timepoints)


def reconstruct(field: IntensityField, station_ids: Optional[Tuple[str, ...]] = None) -> FlowEstimate:
    """Allocate latent departures onto physical destinations.

    Args:
        field: Fitted intensities whose last unit is the latent station.
        station_ids: Labels of the physical stations; taken from the field by default.

    Raises:
        NumericalError: If a station has no same-interval intensity to allocate with.
    """
    nu = field.nu
    n = nu.shape[0] - 1
    if n < 1:
        raise DataError("Reconstruction needs at least one physical station")
    if np.any(nu[:n, :n] < 0) or not np.all(np.isfinite(nu)):
        raise NumericalError("Intensities must be finite and non-negative")
    same = nu[:n, :n, :]
    latent_out = nu[:n, n, :]
    row_sums = same.sum(axis=1)
    if np.any(row_sums <= 0):
        i, t = (int(v) for v in np.argwhere(row_sums <= 0)[0])
        raise NumericalError(f"Station {i} has no outgoing intensity at timepoint {t}", cell=(i, t))

    pi_hat = same / row_sums[:, None, :]
    mu_hat = same + latent_out[:, None, :] * pi_hat
    labels = station_ids or tuple(field.unit_labels[:n]) or tuple(str(i) for i in range(n))
    return FlowEstimate(
        station_ids=tuple(labels),
        timepoints=field.timepoints,
        mu_hat=mu_hat,
        pi_hat=pi_hat,
        mu_in_model=field.mu_in[:n].copy(),
    )


def probability_shares(mu: NDArray[np.float64]) -> NDArray[np.float64]:
    """Poisson shares P(Y = 0), P(Y = 1), P(Y >= 2) per timepoint, averaged over the N^2 pairs."""
    n = mu.shape[0]
    p0 = np.exp(-mu).sum(axis=(0, 1)) / n**2
    p1 = (mu * np.exp(-mu)).sum(axis=(0, 1)) / n**2
    return np.stack([p0, p1, 1.0 - p0 - p1], axis=1)


def observed_shares(trips: NDArray[np.float64]) -> NDArray[np.float64]:
    """Empirical shares of pairs with zero, one and at least two trips per timepoint."""
    n = trips.shape[0]
    zero = (trips == 0).sum(axis=(0, 1)) / n**2
    one = (trips == 1).sum(axis=(0, 1)) / n**2
    return np.stack([zero, one, 1.0 - zero - one], axis=1)


def concordance_slope(estimate: ArrayLike, truth: ArrayLike) -> float:
    """Least-squares slope of estimated on true cumulated degrees."""
    x = np.asarray(truth, dtype=float).ravel()
    y = np.asarray(estimate, dtype=float).ravel()
    if x.size < 2 or np.allclose(x, x[0]):
        return float("nan")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def _relative_error(estimate: NDArray[np.float64], truth: NDArray[np.float64]) -> NDArray[np.float64]:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.abs(estimate - truth) / estimate


def _row_means(values: NDArray[np.float64], keep: NDArray[np.bool_]) -> NDArray[np.float64]:
    counts = keep.sum(axis=1)
    totals = np.where(keep, values, 0.0).sum(axis=1)
    return np.divide(totals, counts, out=np.full(counts.shape, np.nan), where=counts > 0)


@dataclass
class EvalReport:
    """Evaluation tables of a flow estimate; the truth-based tables are None without trips."""

    degrees: pd.DataFrame
    differences: pd.DataFrame
    probabilities: pd.DataFrame
    network_errors: Optional[pd.DataFrame] = None
    station_errors: Optional[pd.DataFrame] = None
    n_excluded: int = 0
    concordance_slope: float = float("nan")

    def summary(self) -> Dict[str, float]:
        out = {"n_excluded": float(self.n_excluded), "concordance_slope": self.concordance_slope}
        if self.network_errors is not None:
            out["mean_delta_out"] = float(self.network_errors["delta_out"].mean())
            out["mean_delta_in"] = float(self.network_errors["delta_in"].mean())
        return out

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        tables = {
            "degrees": self.degrees,
            "differences": self.differences,
            "probabilities": self.probabilities,
            "network_errors": self.network_errors,
            "station_errors": self.station_errors,
        }
        return {name: write_csv(frame, out_dir / f"{name}.csv") for name, frame in tables.items() if frame is not None}


def evaluate(flow: FlowEstimate, trips: Optional[ArrayLike] = None) -> EvalReport:
    """Degrees, expected differences and count-probability shares, plus errors against observed trips.

    Relative errors divide by the estimate. Station means leave out cells whose
    estimate is below MIN_ESTIMATE; their number is reported.

    Raises:
        DataError: If ``trips`` is not aligned with the estimate.
    """
    ids = list(flow.station_ids)
    stamps = flow.timestamps()
    n, _, t = flow.mu_hat.shape
    out_margin, in_margin = flow.out_margin, flow.in_margin

    degrees = pd.DataFrame(
        {"station_id": ids, "out_degree": out_margin.sum(axis=1), "in_degree": in_margin.sum(axis=1)}
    )
    differences = pd.DataFrame(
        {
            "station_id": np.repeat(ids, t),
            "timestamp": np.tile(stamps, n),
            "estimated_difference": flow.estimated_differences().ravel(),
        }
    )
    shares = probability_shares(flow.mu_hat)
    probabilities = pd.DataFrame({"timestamp": stamps, "p0": shares[:, 0], "p1": shares[:, 1], "p2plus": shares[:, 2]})
    report = EvalReport(degrees=degrees, differences=differences, probabilities=probabilities)
    if trips is None:
        return report

    y = np.asarray(trips, dtype=float)
    if y.shape != flow.mu_hat.shape:
        raise DataError(f"Trip counts have shape {y.shape}, the estimate {flow.mu_hat.shape}")
    observed = observed_shares(y)
    for k, column in enumerate(("observed_p0", "observed_p1", "observed_p2plus")):
        probabilities[column] = observed[:, k]

    y_out, y_in = y.sum(axis=1), y.sum(axis=0)
    report.degrees["observed_out_degree"] = y_out.sum(axis=1)
    report.degrees["observed_in_degree"] = y_in.sum(axis=1)

    total_out, total_in = out_margin.sum(axis=0), in_margin.sum(axis=0)
    report.network_errors = pd.DataFrame(
        {
            "timestamp": stamps,
            "delta_out": _relative_error(total_out, y_out.sum(axis=0)),
            "delta_in": _relative_error(total_in, y_in.sum(axis=0)),
        }
    )

    keep_out, keep_in = out_margin >= MIN_ESTIMATE, in_margin >= MIN_ESTIMATE
    delta_out = np.where(keep_out, _relative_error(out_margin, y_out), np.nan)
    delta_in = np.where(keep_in, _relative_error(in_margin, y_in), np.nan)
    report.station_errors = pd.DataFrame(
        {
            "station_id": ids,
            "mean_delta_out": _row_means(delta_out, keep_out),
            "mean_delta_in": _row_means(delta_in, keep_in),
            "excluded_out": (~keep_out).sum(axis=1),
            "excluded_in": (~keep_in).sum(axis=1),
        }
    )
    report.n_excluded = int((~keep_out).sum() + (~keep_in).sum())
    if report.n_excluded:
        logger.info(f"Left {report.n_excluded} near-zero estimates out of the station error means")

    estimate = np.concatenate([report.degrees["out_degree"], report.degrees["in_degree"]])
    truth = np.concatenate([report.degrees["observed_out_degree"], report.degrees["observed_in_degree"]])
    report.concordance_slope = concordance_slope(estimate, truth)
    return report
