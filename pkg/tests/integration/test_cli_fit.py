# tests/integration/test_cli_fit.py
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
import pandas as pd

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from feedflow.cli.main import main
from feedflow.core.config import ScenarioConfig, SimConfig
from feedflow.processors.feeds import format_timestamps, write_csv, write_feeds
from feedflow.services.simulation import generate

RUN_CONFIG = """\
model_kind: dyadic
hour: 18
linear:
  - {name: z_dyad, scope: dyadic}
smooth:
  - {name: z_time, scope: time, num_basis: 5}
band_draws: 500
band_grid: 20
em:
  max_outer: 4
  inner:
    max_iter: 100
"""

SIM_CONFIG = """\
n_stations: 3
t_len: 10
replications: 1
scenarios:
  - name: toy
    beta: [0.0, 0.5, -0.5]
em:
  max_outer: 2
"""


class TestCliFit(unittest.TestCase):
    """End-to-end runs of the command-line interface on generated data"""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        sim = generate(SimConfig(n_stations=4, t_len=30, seed=3), ScenarioConfig(name="toy", beta=(0.0, 0.5, -0.5)), 0)
        cls.sim = sim
        write_feeds(sim.feeds_frame(), cls.dir / "feeds.csv")
        write_csv(sim.covariates_frame(), cls.dir / "covariates.csv")
        (cls.dir / "run.yaml").write_text(RUN_CONFIG, encoding="utf-8")

        n, _, t = sim.trips.shape
        origin, destination, time = np.meshgrid(np.arange(n), np.arange(n), np.arange(t), indexing="ij")
        ids = np.asarray(sim.station_ids)
        stamps = np.asarray(format_timestamps(sim.panel.timepoints))
        trips = pd.DataFrame(
            {
                "origin": ids[origin.ravel()],
                "destination": ids[destination.ravel()],
                "timestamp": stamps[time.ravel()],
                "count": sim.trips.ravel(),
            }
        )
        write_csv(trips, cls.dir / "trips.csv")

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def _inputs(self):
        return [
            "--feeds",
            str(self.dir / "feeds.csv"),
            "--covariates",
            str(self.dir / "covariates.csv"),
        ]

    def test_fit_reconstruct_evaluate(self):
        """fit, reconstruct and evaluate chain through their output files"""
        out = self.dir / "fit"
        code = main(["fit", *self._inputs(), "--config", str(self.dir / "run.yaml"), "--out", str(out)])
        self.assertEqual(code, 0)
        for name in ("coefficients", "smooth_z_time", "random_effects", "sigma", "lambda", "trace"):
            self.assertTrue((out / f"{name}.csv").exists(), name)
        self.assertTrue((out / "fit.json").exists())

        coefficients = pd.read_csv(out / "coefficients.csv")
        self.assertEqual(list(coefficients["name"]), ["(Intercept)", "z_dyad"])
        effects = pd.read_csv(out / "random_effects.csv")
        self.assertEqual(list(effects["station_id"]), list(self.sim.station_ids) + ["w"])
        band = pd.read_csv(out / "smooth_z_time.csv")
        self.assertEqual(len(band), 20)
        self.assertTrue(np.all(band["lower"] <= band["upper"]))

        flows_out = self.dir / "flows"
        code = main(["reconstruct", *self._inputs(), "--fit", str(out / "fit.json"), "--out", str(flows_out)])
        self.assertEqual(code, 0)
        flows = pd.read_csv(flows_out / "flows.csv")
        self.assertEqual(len(flows), 4 * 4 * 30)
        self.assertTrue(np.allclose(flows.groupby(["origin", "timestamp"])["pi_hat"].sum(), 1.0))

        eval_out = self.dir / "eval"
        code = main(
            [
                "evaluate",
                *self._inputs(),
                "--fit",
                str(out / "fit.json"),
                "--trips",
                str(self.dir / "trips.csv"),
                "--out",
                str(eval_out),
            ]
        )
        self.assertEqual(code, 0)
        for name in ("degrees", "differences", "probabilities", "network_errors", "station_errors"):
            self.assertTrue((eval_out / f"{name}.csv").exists(), name)

    def test_alpha_grid(self):
        """The alpha grid search writes its profile and picks a grid value"""
        dist = self.sim.truth.z_dyad - self.sim.truth.z_dyad.min()
        ids = np.asarray(self.sim.station_ids)
        origin, destination = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
        rows = pd.DataFrame(
            {
                "scope": "dyadic",
                "name": "dist",
                "timestamp": "",
                "station_id": ids[origin.ravel()],
                "destination_id": ids[destination.ravel()],
                "value": dist.ravel(),
            }
        )
        covariates = pd.concat([self.sim.covariates_frame(), rows], ignore_index=True)
        write_csv(covariates, self.dir / "covariates_dist.csv")
        config = RUN_CONFIG.replace(
            "linear:\n  - {name: z_dyad, scope: dyadic}\n", "distance_transform: {enabled: true, source: dist}\n"
        )
        (self.dir / "alpha.yaml").write_text(config, encoding="utf-8")
        out = self.dir / "alpha"
        code = main(
            [
                "fit",
                "--feeds",
                str(self.dir / "feeds.csv"),
                "--covariates",
                str(self.dir / "covariates_dist.csv"),
                "--config",
                str(self.dir / "alpha.yaml"),
                "--alpha-grid",
                "1.0,2.0",
                "--out",
                str(out),
            ]
        )
        self.assertEqual(code, 0)
        grid = pd.read_csv(out / "alpha_grid.csv")
        self.assertEqual(list(grid["alpha"]), [1.0, 2.0])
        names = list(pd.read_csv(out / "coefficients.csv")["name"])
        self.assertEqual(len(names), 2)
        self.assertTrue(names[1].endswith("_dist"))

    def test_fit_feeds_only(self):
        """A bare fit on a feed file without covariates runs an intercept-only model"""
        out = self.dir / "bare"
        code = main(["fit", "--feeds", str(self.dir / "feeds.csv"), "--out", str(out)])
        self.assertEqual(code, 0)
        coefficients = pd.read_csv(out / "coefficients.csv")
        self.assertEqual(list(coefficients["name"]), ["(Intercept)"])

    def test_simulate_scenario_alias(self):
        """--scenario paper selects the shipped reference design"""
        fake = MagicMock()
        fake.write.return_value = {}
        fake.summary = pd.DataFrame()
        fake.n_failed = 0
        with patch("feedflow.cli.main.run_study", return_value=fake) as run_study:
            code = main(["simulate", "--scenario", "paper", "--out", str(self.dir / "paper")])
        self.assertEqual(code, 0)
        cfg = run_study.call_args[0][0]
        self.assertEqual(cfg.n_stations, 20)
        self.assertEqual(cfg.scenarios[0].beta, (-5.0, 1.0, -1.0))
        self.assertEqual(cfg.sigma_true, ((1.0, 0.9), (0.9, 1.0)))

    def test_simulate(self):
        """simulate writes the estimate and summary tables"""
        (self.dir / "sim.yaml").write_text(SIM_CONFIG, encoding="utf-8")
        out = self.dir / "sim"
        code = main(["simulate", "--config", str(self.dir / "sim.yaml"), "--seed", "5", "--out", str(out)])
        self.assertEqual(code, 0)
        self.assertTrue((out / "estimates.csv").exists())
        self.assertTrue((out / "summary.csv").exists())

    def test_exit_codes(self):
        """Usage and configuration errors exit 1, data errors exit 2"""
        self.assertEqual(main([]), 1)
        self.assertEqual(main(["fit"]), 1)
        self.assertEqual(main(["fit", "--feeds", "x.csv", "--bogus"]), 1)
        missing = ["fit", "--feeds", str(self.dir / "missing.csv"), "--config", str(self.dir / "run.yaml")]
        self.assertEqual(main(missing), 2)
        (self.dir / "bad.yaml").write_text("hour: 99\n", encoding="utf-8")
        self.assertEqual(main(["fit", *self._inputs(), "--config", str(self.dir / "bad.yaml")]), 1)
        self.assertEqual(main(["reconstruct", *self._inputs(), "--fit", str(self.dir / "nofit.json")]), 2)
        self.assertEqual(main(["simulate", "--scenario", "no-such-scenario"]), 1)


if __name__ == '__main__':
    unittest.main()
