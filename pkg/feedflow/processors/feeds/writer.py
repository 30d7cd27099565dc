# feedflow/processors/feeds/writer.py
import logging
from pathlib import Path
from typing import List, Union

import pandas as pd

# Configure logging
logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
FEED_COLUMNS = ["station_id", "timestamp", "fill"]


def format_timestamps(timepoints) -> List[str]:
    """Render timepoints as canonical UTC strings; non-datetime labels are stringified."""
    index = pd.Index(timepoints)
    if isinstance(index, pd.DatetimeIndex):
        if index.tz is None:
            index = index.tz_localize("UTC")
        return list(index.tz_convert("UTC").strftime(TIMESTAMP_FORMAT))
    return [str(t) for t in index]


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a frame as UTF-8 CSV with a header row and '.' decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_feeds(feeds: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write parsed feed rows back in the ingestion format, ordered by station then timestamp.

    Missing fills are written as empty fields.
    """
    columns = FEED_COLUMNS + (["capacity"] if "capacity" in feeds.columns else [])
    out = feeds.sort_values(["station_id", "timestamp"], kind="mergesort")[columns].copy()
    out["timestamp"] = format_timestamps(out["timestamp"])
    out["fill"] = out["fill"].astype("Int64")
    if "capacity" in out.columns:
        out["capacity"] = out["capacity"].astype("Int64")
    return write_csv(out, path)
