# feedflow/services/simulation/study.py
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from feedflow.core.config import ScenarioConfig, SimConfig
from feedflow.core.errors import FeedflowError
from feedflow.models.dyadic import DyadicFlowModel
from feedflow.models.poisson import PoissonTripModel
from feedflow.processors.feeds.writer import write_csv
from feedflow.services.estimation.em_service import EmService, FitResult
from feedflow.services.simulation.generator import generate

# Configure logging
logger = logging.getLogger(__name__)

SIGMA_NAMES = ("sigma_11", "sigma_12", "sigma_22")
POISSON_PREFIX = "poisson:"


@dataclass
class ReplicationOutcome:
    scenario: str
    replication: int
    estimates: Dict[str, float]
    truth: Dict[str, float]
    converged: bool
    error: Optional[str] = None


@dataclass
class StudyResult:
    estimates: pd.DataFrame
    summary: pd.DataFrame
    outcomes: List[ReplicationOutcome] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(1 for o in self.outcomes if o.error is not None)

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        return {
            "estimates": write_csv(self.estimates, out_dir / "estimates.csv"),
            "summary": write_csv(self.summary, out_dir / "summary.csv"),
        }


def _sigma_entries(sigma: np.ndarray) -> Dict[str, float]:
    return dict(zip(SIGMA_NAMES, (float(sigma[0, 0]), float(sigma[0, 1]), float(sigma[1, 1]))))


def _estimates(result: FitResult, sigma: np.ndarray, prefix: str = "") -> Dict[str, float]:
    out = {f"{prefix}{name}": float(value) for name, value in zip(result.layout.beta_names, result.params.beta)}
    out.update({f"{prefix}{name}": value for name, value in _sigma_entries(sigma).items()})
    return out


def run_replication(cfg: SimConfig, scenario: ScenarioConfig, replication: int) -> ReplicationOutcome:
    """Generate and fit one replication; fit failures are recorded, not raised."""
    sim = generate(cfg, scenario, replication)
    covs = sim.covariates()
    truth = {name: float(value) for name, value in zip(covs.beta_names, sim.truth.beta)}
    truth.update(_sigma_entries(sim.truth.sigma))

    try:
        result = EmService(cfg.em).fit(DyadicFlowModel(sim.panel, covs))
    except FeedflowError as e:
        logger.warning(f"Scenario {scenario.name}, replication {replication} failed: {e}")
        return ReplicationOutcome(scenario.name, replication, {}, truth, converged=False, error=str(e))

    estimates = _estimates(result, result.sigma_without_latent())
    converged = result.converged
    if cfg.benchmark_poisson:
        try:
            benchmark = EmService(cfg.em).fit(PoissonTripModel(sim.trips, covs, sim.station_ids))
            estimates.update(_estimates(benchmark, benchmark.vc.sigma, POISSON_PREFIX))
            truth.update({f"{POISSON_PREFIX}{name}": value for name, value in list(truth.items())})
        except FeedflowError as e:
            logger.warning(f"Poisson benchmark of replication {replication} failed: {e}")
    logger.info(
        f"Scenario {scenario.name}, replication {replication}: "
        + ", ".join(f"{k} = {v:.3f}" for k, v in estimates.items() if not k.startswith(POISSON_PREFIX))
    )
    return ReplicationOutcome(scenario.name, replication, estimates, truth, converged=converged)


def _run_task(task: Tuple[SimConfig, ScenarioConfig, int]) -> ReplicationOutcome:
    return run_replication(*task)


class SimulationStudy:
    """Replicated parameter-recovery study over the configured scenarios."""

    def __init__(self, config: Optional[SimConfig] = None):
        self.config = config or SimConfig()

    def tasks(self) -> List[Tuple[SimConfig, ScenarioConfig, int]]:
        return [
            (self.config, scenario, replication)
            for scenario in self.config.scenarios
            for replication in range(self.config.replications)
        ]

    def run(self) -> StudyResult:
        tasks = self.tasks()
        workers = self.config.workers
        logger.info(
            f"Running {len(tasks)} replications ({len(self.config.scenarios)} scenarios, "
            f"N = {self.config.n_stations}, T = {self.config.t_len}) on {workers} worker(s)"
        )
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                outcomes = list(executor.map(_run_task, tasks))
        else:
            outcomes = [_run_task(task) for task in tasks]

        failed = [o for o in outcomes if o.error is not None]
        if failed:
            logger.warning(f"{len(failed)} of {len(outcomes)} replications failed")
        estimates = estimates_frame(outcomes)
        return StudyResult(estimates=estimates, summary=summarize(estimates), outcomes=outcomes)


def estimates_frame(outcomes: List[ReplicationOutcome]) -> pd.DataFrame:
    """Long table (scenario, replication, parameter, estimate, truth) of successful fits."""
    rows = [
        {
            "scenario": o.scenario,
            "replication": o.replication,
            "parameter": name,
            "estimate": value,
            "truth": o.truth.get(name, np.nan),
        }
        for o in outcomes
        for name, value in o.estimates.items()
    ]
    return pd.DataFrame(rows, columns=["scenario", "replication", "parameter", "estimate", "truth"])


def summarize(estimates: pd.DataFrame) -> pd.DataFrame:
    """Median, mean and standard deviation of each parameter per scenario."""
    columns = ["scenario", "parameter", "median", "mean", "sd", "truth"]
    if estimates.empty:
        return pd.DataFrame(columns=columns)
    grouped = estimates.groupby(["scenario", "parameter"], sort=False)
    summary = grouped.agg(
        median=("estimate", "median"), mean=("estimate", "mean"), sd=("estimate", "std"), truth=("truth", "first")
    )
    return summary.reset_index()[columns]


def run_study(cfg: Optional[SimConfig] = None) -> StudyResult:
    return SimulationStudy(cfg).run()
