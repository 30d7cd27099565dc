# tests/unit/test_ingest.py
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from feedflow.core.config import RunConfig
from feedflow.core.errors import ConfigError, DataError
from feedflow.processors.feeds import (
    build_panel,
    ingest,
    load_inputs,
    read_covariates,
    read_feeds,
    read_trips,
    write_feeds,
)
from feedflow.processors.feeds.derived import empty_both, seasonal, weekday_dummies

TWO_STATIONS = (
    "station_id,timestamp,fill\n"
    "a,2024-03-01T17:00:00Z,5\n"
    "a,2024-03-01T18:00:00Z,4\n"
    "b,2024-03-01T17:00:00Z,3\n"
    "b,2024-03-01T18:00:00Z,4\n"
)


class IngestTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = RunConfig()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return path


class TestFeeds(IngestTestCase):
    """Feed parsing and panel construction"""

    def test_differences_and_latent_station(self):
        """Fill changes become differences and the latent row balances them"""
        panel = build_panel(read_feeds(self.write("feeds.csv", TWO_STATIONS)), self.config)
        self.assertEqual(panel.station_ids, ("a", "b"))
        self.assertEqual(panel.n_times, 1)
        np.testing.assert_array_equal(panel.differences[:, 0], [-1.0, 1.0, 0.0])
        self.assertEqual(panel.timepoints[0], pd.Timestamp("2024-03-01T18:00:00Z"))

    def test_empty_fill_is_missing(self):
        """An empty fill marks the cell missing and leaves the latent row defined"""
        text = TWO_STATIONS.replace("a,2024-03-01T18:00:00Z,4", "a,2024-03-01T18:00:00Z,")
        panel = build_panel(read_feeds(self.write("feeds.csv", text)), self.config)
        self.assertTrue(np.isnan(panel.differences[0, 0]))
        self.assertEqual(panel.n_missing, 1)
        self.assertEqual(panel.differences[2, 0], -1.0)

    def test_non_integer_fill_reports_lines(self):
        """Non-integer fills are reported with their line numbers"""
        text = TWO_STATIONS.replace("b,2024-03-01T17:00:00Z,3", "b,2024-03-01T17:00:00Z,3.5")
        with self.assertRaises(DataError) as ctx:
            read_feeds(self.write("feeds.csv", text))
        self.assertEqual(len(ctx.exception.details), 1)
        self.assertIn("line 4", ctx.exception.details[0])

    def test_reserved_and_duplicate_rows(self):
        """Reserved labels, duplicate rows and missing files raise DataError"""
        with self.assertRaises(DataError):
            read_feeds(self.write("w.csv", TWO_STATIONS + "w,2024-03-01T18:00:00Z,1\n"))
        with self.assertRaises(DataError):
            read_feeds(self.write("dup.csv", TWO_STATIONS + "a,2024-03-01T18:00:00Z,2\n"))
        with self.assertRaises(DataError):
            read_feeds(self.dir / "missing.csv")

    def test_round_trip_is_byte_identical(self):
        """Reading and writing a feed file reproduces it byte for byte"""
        text = TWO_STATIONS.replace("b,2024-03-01T18:00:00Z,4", "b,2024-03-01T18:00:00Z,")
        source = self.write("feeds.csv", text)
        target = write_feeds(read_feeds(source), self.dir / "copy.csv")
        self.assertEqual(target.read_bytes(), source.read_bytes())

    def test_gap_inside_reporting_span(self):
        """A gap inside a station's reporting span is an error naming the station"""
        rows = [
            "a,2024-03-01T17:00:00Z,5",
            "a,2024-03-01T18:00:00Z,4",
            "a,2024-03-02T17:00:00Z,4",
            "a,2024-03-02T18:00:00Z,6",
            "b,2024-03-01T17:00:00Z,3",
            "b,2024-03-02T17:00:00Z,3",
            "b,2024-03-02T18:00:00Z,2",
        ]
        feeds = read_feeds(self.write("feeds.csv", "station_id,timestamp,fill\n" + "\n".join(rows) + "\n"))
        with self.assertRaises(DataError) as ctx:
            build_panel(feeds, self.config)
        self.assertIn("station b", ctx.exception.details[0])

    def test_late_start_is_missing(self):
        """Timepoints before a station starts reporting are missing"""
        rows = [
            "a,2024-03-01T17:00:00Z,5",
            "a,2024-03-01T18:00:00Z,4",
            "a,2024-03-02T17:00:00Z,4",
            "a,2024-03-02T18:00:00Z,6",
            "b,2024-03-02T17:00:00Z,3",
            "b,2024-03-02T18:00:00Z,2",
        ]
        feeds = read_feeds(self.write("feeds.csv", "station_id,timestamp,fill\n" + "\n".join(rows) + "\n"))
        panel = build_panel(feeds, self.config)
        self.assertEqual(panel.n_times, 2)
        self.assertTrue(np.isnan(panel.differences[1, 0]))
        np.testing.assert_array_equal(panel.differences[:, 1], [2.0, -1.0, -1.0])

    def test_off_grid_timestamp(self):
        """Timestamps off the hourly grid are rejected"""
        feeds = read_feeds(self.write("feeds.csv", TWO_STATIONS + "a,2024-03-01T19:30:00Z,4\n"))
        with self.assertRaises(DataError):
            build_panel(feeds, self.config)

    def test_no_timepoint_for_hour(self):
        """A modelled hour with no observations is rejected"""
        with self.assertRaises(DataError):
            build_panel(read_feeds(self.write("feeds.csv", TWO_STATIONS)), RunConfig(hour=9))


class TestCovariateFiles(IngestTestCase):
    """Covariate and trip files"""

    def setUp(self):
        super().setUp()
        self.panel = build_panel(read_feeds(self.write("feeds.csv", TWO_STATIONS)), self.config)

    def test_scopes(self):
        """Covariate rows fill their scope's array"""
        text = (
            "scope,name,timestamp,station_id,destination_id,value\n"
            "time,rain,2024-03-01T18:00:00Z,,,0.4\n"
            "time,rain,2024-03-01T17:00:00Z,,,9.9\n"
            "station_out,hubout,,a,,1\n"
            "station_out,hubout,,b,,0\n"
            "dyadic,dist,,a,b,1.5\n"
            "dyadic,dist,,b,a,1.5\n"
        )
        table = read_covariates(self.write("covs.csv", text), self.panel)
        np.testing.assert_array_equal(table.get("time", "rain"), [0.4])
        np.testing.assert_array_equal(table.get("station_out", "hubout")[:, 0], [1.0, 0.0])
        dist = table.get("dyadic", "dist")[:, :, 0]
        np.testing.assert_array_equal(dist, [[0.0, 1.5], [1.5, 0.0]])

    def test_incomplete_coverage(self):
        """A station covariate missing for some stations is rejected"""
        text = "scope,name,timestamp,station_id,destination_id,value\nstation_in,hubin,,a,,1\n"
        with self.assertRaises(DataError):
            read_covariates(self.write("covs.csv", text), self.panel)

    def test_bad_rows(self):
        """Unknown scopes, bad values and unknown stations raise DataError"""
        header = "scope,name,timestamp,station_id,destination_id,value\n"
        with self.assertRaises(DataError):
            read_covariates(self.write("scope.csv", header + "weekly,x,,,,1\n"), self.panel)
        with self.assertRaises(DataError):
            read_covariates(self.write("value.csv", header + "time,x,2024-03-01T18:00:00Z,,,abc\n"), self.panel)
        with self.assertRaises(DataError):
            read_covariates(self.write("station.csv", header + "station_out,x,,zz,,1\n"), self.panel)

    def test_ingest_resolves_configured_terms(self):
        """ingest returns the configured terms and names missing ones"""
        covs_path = self.write(
            "covs.csv",
            "scope,name,timestamp,station_id,destination_id,value\ntime,rain,2024-03-01T18:00:00Z,,,0.4\n",
        )
        config = RunConfig.model_validate({"linear": [{"name": "rain", "scope": "time"}]})
        panel, covs = ingest(self.dir / "feeds.csv", covs_path, config)
        self.assertEqual(covs.beta_names, ["(Intercept)", "rain"])
        missing = RunConfig.model_validate({"linear": [{"name": "sun", "scope": "time"}]})
        with self.assertRaises(ConfigError):
            ingest(self.dir / "feeds.csv", covs_path, missing)

    def test_trips(self):
        """Trip counts land in the (origin, destination, time) cube"""
        text = (
            "origin,destination,timestamp,count\n"
            "a,b,2024-03-01T18:00:00Z,3\n"
            "b,b,2024-03-01T18:00:00Z,1\n"
            "a,b,2024-02-01T18:00:00Z,7\n"
        )
        trips = read_trips(self.write("trips.csv", text), self.panel)
        self.assertEqual(trips.shape, (2, 2, 1))
        self.assertEqual(trips[0, 1, 0], 3)
        self.assertEqual(trips[1, 1, 0], 1)
        self.assertEqual(trips.sum(), 4)


class TestDerivedCovariates(IngestTestCase):
    """Covariates computed from timestamps and fills"""

    def test_calendar(self):
        """Seasonal and weekday covariates derive from the timestamps"""
        stamps = pd.DatetimeIndex(["2024-01-01T18:00Z", "2024-01-07T18:00Z", "2023-07-02T18:00Z"])
        np.testing.assert_allclose(seasonal(stamps), [0.0, 6 / 366, 182 / 365])
        dummies = weekday_dummies(stamps)
        self.assertNotIn("day_mon", dummies)
        np.testing.assert_array_equal(dummies["day_sun"], [0.0, 1.0, 1.0])

    def test_empty_both(self):
        """empty_both flags stations empty at both readings"""
        fills = np.array([[0.0, 1.0, np.nan]])
        previous = np.array([[0.0, 0.0, 0.0]])
        np.testing.assert_array_equal(empty_both(fills, previous, 0.0), [[1.0, 0.0, 0.0]])

    def test_load_inputs_adds_derived(self):
        """Configured derived covariates join the covariate table"""
        self.write("feeds.csv", TWO_STATIONS)
        config = RunConfig.model_validate({"derived": {"seasonal": True, "weekdays": True, "nobikes": True}})
        _, table = load_inputs(self.dir / "feeds.csv", None, config)
        self.assertIn("seas", table.names("time"))
        self.assertIn("day_fri", table.names("time"))
        self.assertEqual(table.names("station_out"), ["nobikes"])


if __name__ == '__main__':
    unittest.main()
