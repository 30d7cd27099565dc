# feedflow/processors/feeds/derived.py
"""Covariates derived from timestamps and fills at ingestion."""

import logging
from typing import Dict

import numpy as np
import pandas as pd

from feedflow.core.config import DerivedCovariateConfig
from feedflow.core.errors import ConfigError
from feedflow.models.covariates import CovariateTable
from feedflow.models.panel import FeedPanel

# Configure logging
logger = logging.getLogger(__name__)

WEEKDAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


def _datetime_index(panel: FeedPanel, what: str) -> pd.DatetimeIndex:
    if not isinstance(panel.timepoints, pd.DatetimeIndex):
        raise ConfigError(f"The {what} covariate needs timestamped timepoints")
    return panel.timepoints


def seasonal(timepoints: pd.DatetimeIndex) -> np.ndarray:
    """Day of year mapped onto [0, 1)."""
    days_in_year = np.where(timepoints.is_leap_year, 366.0, 365.0)
    return (timepoints.dayofyear.to_numpy() - 1) / days_in_year


def weekday_dummies(timepoints: pd.DatetimeIndex) -> Dict[str, np.ndarray]:
    """Indicators for Tuesday to Sunday; Monday is the reference level."""
    weekday = timepoints.dayofweek.to_numpy()
    return {f"day_{name}": (weekday == k).astype(float) for k, name in enumerate(WEEKDAY_NAMES) if k > 0}


def empty_both(fills: np.ndarray, previous: np.ndarray, level) -> np.ndarray:
    """1 where the fill equals ``level`` at t-1 and t; missing fills read as 0."""
    return ((fills == level) & (previous == level)).astype(float)


def add_derived_covariates(
    table: CovariateTable, panel: FeedPanel, feeds: pd.DataFrame, config: DerivedCovariateConfig
) -> None:
    """Add the requested derived covariates to ``table`` in place.

    ``noboxes`` is skipped with a warning when the feeds carry no capacity column.
    """
    if config.seasonal:
        table.add("time", "seas", seasonal(_datetime_index(panel, "seasonal")))
    if config.weekdays:
        for name, values in weekday_dummies(_datetime_index(panel, "weekday")).items():
            table.add("time", name, values)
    if config.nobikes:
        table.add("station_out", "nobikes", empty_both(panel.fills, panel.previous_fills, 0.0))
    if config.noboxes:
        if "capacity" not in feeds.columns or feeds["capacity"].isna().all():
            logger.warning("noboxes requested but the feeds carry no capacity column; skipping it")
            return
        capacity = feeds.groupby("station_id")["capacity"].max().reindex(list(panel.station_ids))
        full = empty_both(panel.fills, panel.previous_fills, capacity.to_numpy(dtype=float)[:, None])
        table.add("station_in", "noboxes", full)
