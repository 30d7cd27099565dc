#!/usr/bin/env python3
# feedflow/cli/main.py
"""
Command-line interface for feedflow.

Fits the flow models to station feeds, runs the simulation study, and
reconstructs or evaluates origin-destination flows from a saved fit.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from feedflow.core.config import RunConfig, load_run_config, load_sim_config, scenario_path, settings
from feedflow.core.errors import DataError, FeedflowError
from feedflow.core.registry import ModelRegistry
from feedflow.models.base import SkellamFlowModel
from feedflow.models.covariates import with_distance_alpha
from feedflow.processors.feeds import ingest, load_inputs, read_trips, write_csv
from feedflow.services.estimation import (
    FitRecord,
    alpha_grid_search,
    build_model,
    fit,
    load_fit,
    write_fit_outputs,
)
from feedflow.services.reconstruction import FlowEstimate, evaluate, reconstruct
from feedflow.services.simulation import run_study

# Configure logging
logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class FeedflowArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors map onto exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class FeedflowCLI:
    """Runs the CLI commands once arguments are parsed."""

    def __init__(self, args: argparse.Namespace):
        self.args = args

    def _out_dir(self, config_dir: Optional[str] = None) -> Path:
        return Path(self.args.out or config_dir or settings.OUTPUT_DIR)

    def run_config(self) -> RunConfig:
        """Defaults, then the model preset or the config file, then flags.

        Without a config file and without --model the fit is an intercept-only dyadic
        model; --model alone selects the shipped preset of that kind.
        """
        args = self.args
        ModelRegistry.load_all_configs()
        config_file = args.config or settings.CONFIG_FILE
        base = None
        if config_file is None and args.model:
            base = ModelRegistry.get_model_config(args.model)
        overrides: Dict[str, Any] = {"hour": args.hour, "model_kind": args.model}
        if args.seed is not None:
            overrides["em"] = {"seed": args.seed}
        return load_run_config(config_file, overrides, base=base)

    def fit(self) -> Dict[str, Path]:
        args = self.args
        config = self.run_config()
        out_dir = self._out_dir(config.output_dir)
        written: Dict[str, Path] = {}

        if args.alpha_grid:
            alphas = _parse_floats(args.alpha_grid)
            panel, table = load_inputs(args.feeds, args.covariates, config)
            grid, best = alpha_grid_search(panel, table, config, alphas)
            written["alpha_grid"] = write_csv(grid, out_dir / "alpha_grid.csv")
            logger.info(f"Selected alpha = {best:g}")
            config = with_distance_alpha(config, best)

        panel, covs = ingest(args.feeds, args.covariates, config)
        result = fit(panel, covs, config.model_kind, config.em)
        for message in result.warnings:
            logger.warning(message)
        written.update(write_fit_outputs(result, covs, config, out_dir))
        status = "converged" if result.converged else "did not converge"
        print(f"Fit {status} after {len(result.trace)} EM iterations; results in {out_dir}")
        return written

    def _flows(self) -> Tuple[FitRecord, SkellamFlowModel, FlowEstimate]:
        args = self.args
        record = load_fit(args.fit)
        config = record.run_config()
        panel, covs = ingest(args.feeds, args.covariates, config)
        if list(panel.station_ids) != record.station_ids:
            raise DataError("Feeds cover other stations than the saved fit")
        model = build_model(panel, covs, record.model_kind)
        if model.layout != record.layout:
            raise DataError("Feeds and covariates do not reproduce the parameter layout of the saved fit")
        return record, model, reconstruct(model.margins(record.params))

    def reconstruct(self) -> Dict[str, Path]:
        record, _, flows = self._flows()
        out_dir = self._out_dir(record.run_config().output_dir)
        path = write_csv(flows.to_frame(), out_dir / "flows.csv")
        print(f"Wrote reconstructed flows to {path}")
        return {"flows": path}

    def evaluate(self) -> Dict[str, Path]:
        record, model, flows = self._flows()
        trips = read_trips(self.args.trips, model.panel) if self.args.trips else None
        report = evaluate(flows, trips)
        written = report.write(self._out_dir(record.run_config().output_dir))
        for key, value in report.summary().items():
            print(f"{key}: {value:.4f}")
        return written

    def simulate(self) -> Dict[str, Path]:
        args = self.args
        path = args.config or scenario_path(args.scenario)
        overrides: Dict[str, Any] = {"seed": args.seed, "workers": args.workers or settings.WORKERS}
        if args.replications is not None:
            overrides["replications"] = args.replications
        cfg = load_sim_config(path, overrides)
        if args.full_scale:
            cfg = cfg.at_full_scale()
        result = run_study(cfg)
        written = result.write(self._out_dir())
        print(result.summary.to_string(index=False))
        if result.n_failed:
            print(f"{result.n_failed} replications failed")
        return written


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(f"Could not parse '{text}' as comma-separated numbers") from e


def build_parser() -> FeedflowArgumentParser:
    parser = FeedflowArgumentParser(prog="feedflow", description="Origin-destination flows from station feeds")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log debug output")

    subparsers = parser.add_subparsers(dest="command", help="Command to execute", parser_class=FeedflowArgumentParser)

    def common(sub):
        sub.add_argument("--feeds", required=True, help="Station feed CSV")
        sub.add_argument("--covariates", help="Covariate CSV")
        sub.add_argument("--out", help="Output directory")

    # Fit
    fit_parser = subparsers.add_parser("fit", help="Fit a flow model to station feeds")
    common(fit_parser)
    fit_parser.add_argument("--config", help="Run configuration YAML")
    fit_parser.add_argument("--hour", type=int, help="Hour of day (1-24) to model")
    fit_parser.add_argument(
        "--model",
        choices=["dyadic", "station"],
        help="Model parameterisation; without --config this loads the preset config/models/<kind>.yaml "
        "and its covariates (default: intercept-only dyadic model)",
    )
    fit_parser.add_argument("--seed", type=int, help="Seed for confidence-band draws")
    fit_parser.add_argument("--alpha-grid", help="Comma-separated alphas of the distance transform to compare")

    # Simulate
    sim_parser = subparsers.add_parser("simulate", help="Run the parameter-recovery simulation study")
    sim_parser.add_argument("--scenario", default="reference", help="Shipped scenario name")
    sim_parser.add_argument("--config", help="Simulation configuration YAML (replaces the scenario file)")
    sim_parser.add_argument("--full-scale", action="store_true", help="Use the full replication count and length")
    sim_parser.add_argument("--seed", type=int, help="Base seed")
    sim_parser.add_argument("--replications", type=int, help="Number of replications per scenario")
    sim_parser.add_argument("--workers", type=int, help="Worker processes")
    sim_parser.add_argument("--out", help="Output directory")

    # Reconstruct
    rec_parser = subparsers.add_parser("reconstruct", help="Reconstruct origin-destination flows from a saved fit")
    common(rec_parser)
    rec_parser.add_argument("--fit", required=True, help="fit.json written by the fit command")

    # Evaluate
    eval_parser = subparsers.add_parser("evaluate", help="Evaluate reconstructed flows")
    common(eval_parser)
    eval_parser.add_argument("--fit", required=True, help="fit.json written by the fit command")
    eval_parser.add_argument("--trips", help="Observed trip CSV (origin,destination,timestamp,count)")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"feedflow: error: {e}", file=sys.stderr)
        return 1

    if not args.command:
        parser.print_help()
        return 1

    logging.basicConfig(level=logging.DEBUG if args.verbose else settings.LOG_LEVEL, format=LOG_FORMAT)
    cli = FeedflowCLI(args)

    try:
        if args.command == "fit":
            cli.fit()
        elif args.command == "simulate":
            cli.simulate()
        elif args.command == "reconstruct":
            cli.reconstruct()
        elif args.command == "evaluate":
            cli.evaluate()
    except UsageError as e:
        print(f"feedflow: error: {e}", file=sys.stderr)
        return 1
    except FeedflowError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"feedflow: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
