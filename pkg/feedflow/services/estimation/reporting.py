# feedflow/services/estimation/reporting.py
"""
Tables and files written after a fit.

The fit itself is persisted as ``fit.json`` so that flows can be
reconstructed later from the same feeds and configuration.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from feedflow.core.config import RunConfig
from feedflow.core.errors import ConfigError, DataError
from feedflow.models.covariates import CovariateSet, SmoothTerm
from feedflow.models.params import ParamLayout, ParamVector, VarianceComponents
from feedflow.processors.feeds.writer import write_csv
from feedflow.services.estimation.em_service import FitResult

# Configure logging
logger = logging.getLogger(__name__)


class FitRecord(BaseModel):
    """Serialised form of a fit."""

    model_kind: str
    station_ids: List[str]
    beta_names: List[str]
    gamma_names: List[str]
    gamma_sizes: List[int]
    n_units: int
    theta: List[float]
    sigma: List[List[float]]
    lam: List[float]
    standard_errors: List[float]
    converged: bool
    loglik: float
    penalized_loglik: float
    warnings: List[str] = []
    config: Dict[str, Any] = {}

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(
            beta_names=tuple(self.beta_names),
            gamma_names=tuple(self.gamma_names),
            gamma_sizes=tuple(self.gamma_sizes),
            n_units=self.n_units,
        )

    @property
    def params(self) -> ParamVector:
        return ParamVector.from_flat(self.layout, np.asarray(self.theta))

    @property
    def vc(self) -> VarianceComponents:
        return VarianceComponents(sigma=np.asarray(self.sigma), lam=np.asarray(self.lam))

    def run_config(self) -> RunConfig:
        try:
            return RunConfig.model_validate(self.config)
        except ValidationError as e:
            raise ConfigError(f"fit.json carries an invalid configuration: {e}") from e


def to_record(result: FitResult, station_ids: Tuple[str, ...], config: Optional[RunConfig] = None) -> FitRecord:
    layout = result.layout
    return FitRecord(
        model_kind=result.model_kind,
        station_ids=list(station_ids),
        beta_names=list(layout.beta_names),
        gamma_names=list(layout.gamma_names),
        gamma_sizes=list(layout.gamma_sizes),
        n_units=layout.n_units,
        theta=result.params.flatten().tolist(),
        sigma=result.vc.sigma.tolist(),
        lam=result.vc.lam.tolist(),
        standard_errors=result.standard_errors.tolist(),
        converged=result.converged,
        loglik=result.loglik,
        penalized_loglik=result.penalized_loglik,
        warnings=result.warnings,
        config=config.model_dump(mode="json") if config is not None else {},
    )


def save_fit(record: FitRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Saved fit to {path}")
    return path


def load_fit(path: Union[str, Path]) -> FitRecord:
    """Read a fit written by save_fit.

    Raises:
        DataError: If the file is missing or malformed.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Fit file not found: {path}")
    try:
        return FitRecord.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataError(f"Malformed fit file {path}: {e}") from e


def smooth_band(
    term: SmoothTerm,
    gamma: np.ndarray,
    covariance: np.ndarray,
    draws: int = 10_000,
    grid: int = 100,
    rng: Optional[np.random.Generator] = None,
) -> pd.DataFrame:
    """Pointwise 95% band of a smooth function from draws of its spline coefficients.

    Returns:
        Frame with columns x, estimate, lower, upper over an even grid of the term's domain.
    """
    rng = rng or np.random.default_rng()
    lo, hi = term.basis.spec.domain
    x = np.linspace(lo, hi, grid)
    design = term.basis.design(x)
    samples = rng.multivariate_normal(gamma, 0.5 * (covariance + covariance.T), size=draws, method="eigh")
    curves = samples @ design.T
    lower, upper = np.quantile(curves, [0.025, 0.975], axis=0)
    return pd.DataFrame({"x": x, "estimate": design @ gamma, "lower": lower, "upper": upper})


def write_fit_outputs(
    result: FitResult, covs: CovariateSet, config: RunConfig, out_dir: Union[str, Path]
) -> Dict[str, Path]:
    """Write coefficient, smooth, random-effect, variance and trace tables plus fit.json."""
    out_dir = Path(out_dir)
    written: Dict[str, Path] = {}
    written["coefficients"] = write_csv(result.coefficient_table(), out_dir / "coefficients.csv")

    rng = np.random.default_rng(config.em.seed)
    for m, term in enumerate(covs.smooth):
        band = smooth_band(
            term,
            result.params.gamma[m],
            result.fisher_inv.gamma_block(m),
            draws=config.band_draws,
            grid=config.band_grid,
            rng=rng,
        )
        written[f"smooth_{term.name}"] = write_csv(band, out_dir / f"smooth_{term.name}.csv")

    written["random_effects"] = write_csv(result.random_effects_table(), out_dir / "random_effects.csv")
    sigma = result.vc.sigma
    sigma_rows = [{"row": a, "col": b, "value": sigma[a, b]} for a in range(2) for b in range(2)]
    written["sigma"] = write_csv(pd.DataFrame(sigma_rows), out_dir / "sigma.csv")
    written["lambda"] = write_csv(
        pd.DataFrame({"term": list(result.layout.gamma_names), "lambda": result.vc.lam}, columns=["term", "lambda"]),
        out_dir / "lambda.csv",
    )
    written["trace"] = write_csv(result.trace_frame(), out_dir / "trace.csv")
    station_ids = tuple(label for label in result.unit_labels[: covs.n_stations])
    written["fit"] = save_fit(to_record(result, station_ids, config), out_dir / "fit.json")
    return written
