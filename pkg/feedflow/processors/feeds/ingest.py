# feedflow/processors/feeds/ingest.py
"""
Ingestion of station feeds and covariate files.

Feeds are CSV rows ``station_id,timestamp,fill[,capacity]`` on a regular UTC
grid. An empty fill marks a declared missing observation. A station may start
reporting late or stop early; timepoints outside its reporting span count as
missing, while absent rows inside the span are gaps and rejected.

Covariate files are CSV rows ``scope,name,timestamp,station_id,destination_id,value``.
Which keys are filled in depends on the scope:

- ``time``: timestamp
- ``station_out`` / ``station_in``: station_id, optionally timestamp
- ``dyadic``: station_id (origin) and destination_id, optionally timestamp

Rows without a timestamp hold a value that is constant over time.
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from feedflow.core.config import RunConfig
from feedflow.core.errors import DataError
from feedflow.models.covariates import SCOPES, CovariateSet, CovariateTable, build_covariates
from feedflow.models.panel import LATENT_LABEL, FeedPanel
from feedflow.processors.feeds.derived import add_derived_covariates

# Configure logging
logger = logging.getLogger(__name__)

COVARIATE_COLUMNS = ["scope", "name", "timestamp", "station_id", "destination_id", "value"]
_INTEGER = re.compile(r"^\s*\d+\s*$")
# CSV data rows start on line 2, after the header.
_FIRST_LINE = 2
_MAX_DETAILS = 20


def _line_numbers(mask: pd.Series) -> List[int]:
    return [int(i) + _FIRST_LINE for i in np.flatnonzero(mask.to_numpy())]


def _details(mask: pd.Series, raw: Optional[pd.Series] = None) -> List[str]:
    lines = _line_numbers(mask)[:_MAX_DETAILS]
    if raw is None:
        return [f"line {n}" for n in lines]
    return [f"line {n}: '{raw.iloc[n - _FIRST_LINE]}'" for n in lines]


def _parse_timestamps(raw: pd.Series, what: str) -> pd.Series:
    parsed = pd.to_datetime(raw, utc=True, errors="coerce", format="ISO8601")
    bad = parsed.isna() & (raw.str.strip() != "")
    if bad.any():
        raise DataError(f"Unparsable timestamps in {what}", _details(bad, raw))
    return parsed


def _read_frame(path: Union[str, Path], required: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"Could not parse {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{path} lacks required columns: {', '.join(missing)}")
    return frame


def read_feeds(path: Union[str, Path]) -> pd.DataFrame:
    """Parse a feed file.

    Returns:
        Frame with columns station_id (str), timestamp (UTC datetime), fill (float,
        NaN when missing) and capacity when present.

    Raises:
        DataError: On non-integer fills (with line numbers), bad timestamps or
            duplicate (station_id, timestamp) rows.
    """
    raw = _read_frame(path, ["station_id", "timestamp", "fill"])
    fill_text = raw["fill"].str.strip()
    bad = (fill_text != "") & ~fill_text.str.match(_INTEGER)
    if bad.any():
        raise DataError(f"Fills must be non-negative integers in {path}", _details(bad, raw["fill"]))

    frame = pd.DataFrame(
        {
            "station_id": raw["station_id"].str.strip(),
            "timestamp": _parse_timestamps(raw["timestamp"], str(path)),
            "fill": pd.to_numeric(fill_text.replace("", np.nan)).astype(float),
        }
    )
    if frame["timestamp"].isna().any():
        raise DataError(f"Missing timestamps in {path}", _details(frame["timestamp"].isna()))
    if (frame["station_id"] == LATENT_LABEL).any():
        raise DataError(f"Station id '{LATENT_LABEL}' is reserved for the latent station")
    if "capacity" in raw.columns:
        capacity = raw["capacity"].str.strip()
        bad = (capacity != "") & ~capacity.str.match(_INTEGER)
        if bad.any():
            raise DataError(f"Capacities must be non-negative integers in {path}", _details(bad, raw["capacity"]))
        frame["capacity"] = pd.to_numeric(capacity.replace("", np.nan)).astype(float)

    duplicated = frame.duplicated(["station_id", "timestamp"], keep=False)
    if duplicated.any():
        raise DataError(
            f"Duplicate (station_id, timestamp) rows in {path}",
            _details(duplicated),
        )
    return frame


def select_timepoints(grid: pd.DatetimeIndex, hour: int, step: pd.Timedelta) -> pd.DatetimeIndex:
    """Timepoints ending the interval (hour - 1, hour] whose predecessor lies on the grid."""
    chosen = grid[(grid.hour == hour % 24) & (grid - step >= grid[0])]
    return pd.DatetimeIndex(chosen)


def build_panel(feeds: pd.DataFrame, config: RunConfig) -> FeedPanel:
    """Turn parsed feed rows into a panel for the configured hour of day.

    Raises:
        DataError: If timestamps leave the grid or a station has gaps.
    """
    if feeds.empty:
        raise DataError("Feed file contains no rows")
    step = pd.Timedelta(hours=config.grid_hours)
    start, end = feeds["timestamp"].min(), feeds["timestamp"].max()
    offsets = feeds["timestamp"] - start
    whole_hours = feeds["timestamp"].dt.floor(pd.Timedelta(hours=1)) == feeds["timestamp"]
    off_grid = (offsets % step != pd.Timedelta(0)) | ~whole_hours
    if off_grid.any():
        raise DataError(
            f"Timestamps off the {config.grid_hours}-hour grid",
            _details(off_grid),
        )

    grid = pd.date_range(start, end, freq=step)
    timepoints = select_timepoints(grid, config.hour, step)
    if len(timepoints) == 0:
        raise DataError(f"No timepoints for hour {config.hour} with a preceding observation")
    required = timepoints.union(timepoints - step)

    wide = feeds.pivot(index="station_id", columns="timestamp", values="fill").sort_index()
    present = feeds.assign(row=1).pivot(index="station_id", columns="timestamp", values="row").sort_index()
    wide = wide.reindex(columns=required)
    present = present.reindex(columns=required)

    gaps: List[str] = []
    for station in wide.index:
        stamps = feeds.loc[feeds["station_id"] == station, "timestamp"]
        first, last = stamps.min(), stamps.max()
        inside = (required >= first) & (required <= last)
        absent = required[inside & present.loc[station].isna().to_numpy()]
        if len(absent):
            shown = ", ".join(t.strftime("%Y-%m-%dT%H:%M:%SZ") for t in absent[:5])
            more = f" and {len(absent) - 5} more" if len(absent) > 5 else ""
            gaps.append(f"station {station}: {len(absent)} missing rows ({shown}{more})")
    if gaps:
        raise DataError("Gaps in the feed grid", gaps)

    current = wide[timepoints].to_numpy(dtype=float)
    previous = wide[timepoints - step].to_numpy(dtype=float)
    panel = FeedPanel.from_fills(tuple(wide.index), timepoints, current, previous)
    logger.info(
        f"Ingested {panel.n_stations} stations x {panel.n_times} timepoints for hour {config.hour} "
        f"({panel.n_missing} missing differences)"
    )
    return panel


def read_covariates(path: Union[str, Path], panel: FeedPanel) -> CovariateTable:
    """Parse a covariate file against the panel's stations and timepoints.

    Rows for timestamps outside the panel are ignored. Dyadic values on the
    diagonal default to zero.

    Raises:
        DataError: On unknown scopes or stations, duplicate keys, non-numeric
            values or incomplete coverage.
    """
    raw = _read_frame(path, ["scope", "name", "value"])
    for column in COVARIATE_COLUMNS:
        if column not in raw.columns:
            raw[column] = ""
    raw = raw[COVARIATE_COLUMNS].apply(lambda c: c.str.strip())

    bad_scope = ~raw["scope"].isin(SCOPES)
    if bad_scope.any():
        raise DataError(f"Unknown scopes in {path}", _details(bad_scope, raw["scope"]))
    values = pd.to_numeric(raw["value"], errors="coerce")
    bad_value = values.isna() | ~np.isfinite(values.fillna(0.0))
    if bad_value.any():
        raise DataError(f"Non-numeric covariate values in {path}", _details(bad_value, raw["value"]))

    keys = ["scope", "name", "timestamp", "station_id", "destination_id"]
    duplicated = raw.duplicated(keys, keep=False)
    if duplicated.any():
        raise DataError(f"Duplicate covariate rows in {path}", _details(duplicated))

    frame = raw.assign(value=values.astype(float), stamp=_parse_timestamps(raw["timestamp"], str(path)))
    ids = {s: i for i, s in enumerate(panel.station_ids)}
    times = pd.DatetimeIndex(panel.timepoints)
    table = CovariateTable(panel.n_stations, panel.n_times)

    for (scope, name), group in frame.groupby(["scope", "name"], sort=True):
        timed = group["timestamp"] != ""
        if timed.any() and not timed.all():
            raise DataError(f"Covariate '{name}' ({scope}) mixes timed and time-constant rows")
        if timed.all():
            group = group[group["stamp"].isin(times)]
        table.add(scope, name, _assemble(scope, name, group, ids, times, bool(timed.all())))
    logger.info("Read covariates: " + ", ".join(f"{s}={len(table.names(s))}" for s in SCOPES))
    return table


def _station_index(values: pd.Series, ids: Dict[str, int], name: str) -> np.ndarray:
    unknown = sorted(set(values) - set(ids))
    if unknown:
        raise DataError(f"Covariate '{name}' references unknown stations: {', '.join(unknown[:10])}")
    return values.map(ids).to_numpy(dtype=int)


def _assemble(
    scope: str, name: str, group: pd.DataFrame, ids: Dict[str, int], times: pd.DatetimeIndex, timed: bool
) -> np.ndarray:
    n, t = len(ids), len(times)
    col = times.get_indexer(group["stamp"]) if timed else None

    if scope == "time":
        if not timed:
            raise DataError(f"Time covariate '{name}' needs timestamps")
        out = np.full(t, np.nan)
        out[col] = group["value"].to_numpy()
    elif scope in ("station_out", "station_in"):
        row = _station_index(group["station_id"], ids, name)
        out = np.full((n, t), np.nan) if timed else np.full(n, np.nan)
        if timed:
            out[row, col] = group["value"].to_numpy()
        else:
            out[row] = group["value"].to_numpy()
    else:
        row = _station_index(group["station_id"], ids, name)
        dest = _station_index(group["destination_id"], ids, name)
        out = np.full((n, n, t if timed else 1), np.nan)
        out[row, dest, col if timed else 0] = group["value"].to_numpy()
        diagonal = np.arange(n)
        out[diagonal, diagonal] = np.where(np.isnan(out[diagonal, diagonal]), 0.0, out[diagonal, diagonal])

    if np.isnan(out).any():
        raise DataError(f"Covariate '{name}' ({scope}) does not cover every station and timepoint of the panel")
    return out


def load_inputs(
    feeds_path: Union[str, Path], covariates_path: Optional[Union[str, Path]], config: RunConfig
) -> Tuple[FeedPanel, CovariateTable]:
    """Read feeds and covariates and add the configured derived covariates."""
    feeds = read_feeds(feeds_path)
    panel = build_panel(feeds, config)
    if covariates_path is not None:
        table = read_covariates(covariates_path, panel)
    else:
        table = CovariateTable(panel.n_stations, panel.n_times)
    add_derived_covariates(table, panel, feeds, config.derived)
    return panel, table


def ingest(
    feeds_path: Union[str, Path], covariates_path: Optional[Union[str, Path]], config: RunConfig
) -> Tuple[FeedPanel, CovariateSet]:
    """Read the inputs of a fit and resolve the configured covariate terms.

    Raises:
        DataError: If a file cannot be parsed or the feed grid has gaps.
        ConfigError: If a configured term references an unknown covariate.
    """
    panel, table = load_inputs(feeds_path, covariates_path, config)
    return panel, build_covariates(table, config)


def read_trips(path: Union[str, Path], panel: FeedPanel) -> np.ndarray:
    """Observed trip counts from rows ``origin,destination,timestamp,count`` as an (N, N, T) array.

    Pairs and timepoints without a row count zero trips; rows outside the
    panel's timepoints are ignored.

    Raises:
        DataError: On unknown stations, non-integer counts or duplicate rows.
    """
    raw = _read_frame(path, ["origin", "destination", "timestamp", "count"])
    count_text = raw["count"].str.strip()
    bad = ~count_text.str.match(_INTEGER)
    if bad.any():
        raise DataError(f"Trip counts must be non-negative integers in {path}", _details(bad, raw["count"]))
    duplicated = raw.duplicated(["origin", "destination", "timestamp"], keep=False)
    if duplicated.any():
        raise DataError(f"Duplicate trip rows in {path}", _details(duplicated))

    stamps = _parse_timestamps(raw["timestamp"], str(path))
    col = pd.DatetimeIndex(panel.timepoints).get_indexer(stamps)
    keep = col >= 0
    ids = {s: i for i, s in enumerate(panel.station_ids)}
    origin = _station_index(raw["origin"].str.strip()[keep], ids, "trips")
    destination = _station_index(raw["destination"].str.strip()[keep], ids, "trips")

    trips = np.zeros((panel.n_stations, panel.n_stations, panel.n_times))
    trips[origin, destination, col[keep]] = count_text[keep].astype(int).to_numpy()
    logger.info(f"Read {int(trips.sum())} trips over {int(keep.sum())} rows from {path}")
    return trips
