# feedflow/processors/feeds/__init__.py
from feedflow.processors.feeds.derived import add_derived_covariates
from feedflow.processors.feeds.ingest import (
    build_panel,
    ingest,
    load_inputs,
    read_covariates,
    read_feeds,
    read_trips,
)
from feedflow.processors.feeds.writer import format_timestamps, write_csv, write_feeds

__all__ = [
    "add_derived_covariates",
    "build_panel",
    "format_timestamps",
    "ingest",
    "load_inputs",
    "read_covariates",
    "read_feeds",
    "read_trips",
    "write_csv",
    "write_feeds",
]
