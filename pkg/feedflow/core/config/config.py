# feedflow/core/config/config.py
"""
Run and simulation configuration.

A configuration file is a YAML document that is merged recursively over the
built-in defaults and then validated into the pydantic models below. Every
default stated here can be overridden from the file or from CLI flags.
"""

import logging
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from feedflow.core.errors import ConfigError

# Configure logging
logger = logging.getLogger(__name__)

Scope = Literal["time", "station_out", "station_in", "dyadic"]

CONFIG_ROOT = Path(__file__).parent.parent.parent.parent / "config"


class InnerConfig(BaseModel):
    """Settings of the quasi-Newton inner maximisation."""

    grad_tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(500, ge=1)
    c1: float = Field(1e-4, gt=0, lt=1)
    c2: float = Field(0.9, gt=0, lt=1)
    max_backtracks: int = Field(30, ge=1)

    @model_validator(mode="after")
    def _wolfe_order(self):
        if self.c1 >= self.c2:
            raise ValueError("Wolfe constants need c1 < c2")
        return self


class EmConfig(BaseModel):
    """Settings of the outer approximate-EM loop."""

    epsilon: float = Field(1e-3, gt=0)
    max_outer: int = Field(50, ge=1)
    inner: InnerConfig = Field(default_factory=InnerConfig)
    lambda_bounds: Tuple[float, float] = (1e-6, 1e8)
    eigen_floor: float = Field(1e-8, gt=0)
    # Relative to max(1, |Laplace log-likelihood|)
    divergence_tol: float = Field(1e-6, ge=0)
    seed: int = 0

    @field_validator("lambda_bounds")
    @classmethod
    def _check_bounds(cls, value):
        low, high = value
        if low <= 0 or high <= low:
            raise ValueError(f"lambda_bounds must satisfy 0 < min < max, got {value}")
        return value


class LinearTermConfig(BaseModel):
    name: str
    scope: Scope


class SmoothTermConfig(BaseModel):
    """A penalised spline term s_m."""

    name: str
    scope: Scope = "time"
    num_basis: int = Field(10, ge=4)
    kind: Literal["open", "cyclic"] = "open"
    domain: Optional[Tuple[float, float]] = None

    @field_validator("domain")
    @classmethod
    def _check_domain(cls, value):
        if value is not None and not value[0] < value[1]:
            raise ValueError(f"domain needs lo < hi, got {value}")
        return value


class DistanceTransformConfig(BaseModel):
    """The fixed transform f_alpha(dist) = dist**alpha * exp(-dist) as a dyadic linear term."""

    enabled: bool = False
    alpha: float = Field(1.7, gt=0)
    source: str = "dist"
    name: Optional[str] = None

    @property
    def term_name(self) -> str:
        return self.name or f"f{self.alpha:g}_{self.source}"


class DerivedCovariateConfig(BaseModel):
    """Covariates computed at ingestion from timestamps and fills."""

    seasonal: bool = False
    weekdays: bool = False
    nobikes: bool = False
    noboxes: bool = False


class RunConfig(BaseModel):
    """Complete configuration of a fit."""

    model_kind: Literal["dyadic", "station"] = "dyadic"
    hour: int = Field(18, ge=1, le=24)
    grid_hours: int = Field(1, ge=1)
    intercept: bool = True
    linear: List[LinearTermConfig] = Field(default_factory=list)
    smooth: List[SmoothTermConfig] = Field(default_factory=list)
    distance_transform: DistanceTransformConfig = Field(default_factory=DistanceTransformConfig)
    derived: DerivedCovariateConfig = Field(default_factory=DerivedCovariateConfig)
    em: EmConfig = Field(default_factory=EmConfig)
    output_dir: str = "out"
    band_draws: int = Field(10_000, ge=100)
    band_grid: int = Field(100, ge=2)

    @model_validator(mode="after")
    def _unique_names(self):
        names = [term.name for term in self.linear] + [term.name for term in self.smooth]
        if self.distance_transform.enabled:
            names.append(self.distance_transform.term_name)
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"Covariate terms configured more than once: {', '.join(duplicates)}")
        return self


class ScenarioConfig(BaseModel):
    """A true parameter vector (intercept, time effect, dyadic effect) for the simulation study."""

    name: str
    beta: Tuple[float, float, float]


class SimConfig(BaseModel):
    """Simulation design. Defaults are desk scale; see at_full_scale()."""

    FULL_SCALE: ClassVar[Tuple[int, int]] = (250, 500)

    n_stations: int = Field(20, ge=2)
    t_len: int = Field(100, ge=2)
    replications: int = Field(20, ge=1)
    scenarios: List[ScenarioConfig] = Field(
        default_factory=lambda: [ScenarioConfig(name="reference", beta=(-5.0, 1.0, -1.0))]
    )
    sigma_true: Tuple[Tuple[float, float], Tuple[float, float]] = ((1.0, 0.9), (0.9, 1.0))
    carryover_prob: float = Field(1.0 / 3.0, ge=0, le=1)
    prev_scale: float = Field(0.9, ge=0)
    initial_fill: int = Field(50, ge=0)
    seed: int = 20
    workers: int = Field(1, ge=1)
    benchmark_poisson: bool = False
    em: EmConfig = Field(default_factory=EmConfig)
    # Other names under which a shipped scenario file can be selected
    aliases: List[str] = Field(default_factory=list)

    @field_validator("sigma_true")
    @classmethod
    def _check_sigma(cls, value):
        matrix = np.asarray(value, dtype=float)
        if not np.allclose(matrix, matrix.T) or np.linalg.eigvalsh(matrix).min() <= 0:
            raise ValueError(f"sigma_true must be symmetric positive definite, got {value}")
        return value

    def at_full_scale(self) -> "SimConfig":
        """Return a copy with the full replication count and series length."""
        replications, t_len = self.FULL_SCALE
        return self.model_copy(update={"replications": replications, "t_len": t_len})


def _merge_configs(default: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge two configuration dictionaries.

    Args:
        default: Default configuration.
        override: Configuration to override defaults.

    Returns:
        Merged configuration.
    """
    result = default.copy()

    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _merge_configs(result[key], value)
        else:
            result[key] = value

    return result


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse configuration file {path}: {e}") from e
    if not isinstance(content, dict):
        raise ConfigError(f"Configuration file {path} must contain a mapping at the top level")
    logger.info(f"Loaded configuration from {path}")
    return content


def _build(
    model_cls,
    path: Optional[Union[str, Path]],
    overrides: Optional[Dict[str, Any]],
    base: Optional[Dict[str, Any]] = None,
):
    merged = model_cls().model_dump(mode="python")
    if base:
        merged = _merge_configs(merged, base)
    if path is not None:
        merged = _merge_configs(merged, _read_yaml(path))
    if overrides:
        merged = _merge_configs(merged, {k: v for k, v in overrides.items() if v is not None})
    try:
        return model_cls.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid {model_cls.__name__}: {e}") from e


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    base: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Load a run configuration.

    Args:
        path: Optional YAML file merged over the defaults.
        overrides: Optional nested mapping applied last (CLI flags); None values are ignored.
        base: Optional preset merged over the defaults before the file.

    Returns:
        Validated RunConfig.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid.
    """
    return _build(RunConfig, path, overrides, base)


def load_sim_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None
) -> SimConfig:
    """Load a simulation configuration; see load_run_config."""
    return _build(SimConfig, path, overrides)


def scenario_path(name: str) -> Path:
    """Path of a shipped scenario file, looked up by file stem or by a name listed under ``aliases``."""
    scenario_dir = CONFIG_ROOT / "scenarios"
    path = scenario_dir / f"{name}.yaml"
    if path.exists():
        return path
    available = []
    for candidate in sorted(scenario_dir.glob("*.yaml")):
        with open(candidate, "r", encoding="utf-8") as f:
            aliases = (yaml.safe_load(f) or {}).get("aliases") or []
        if name in aliases:
            return candidate
        available.extend([candidate.stem, *aliases])
    raise ConfigError(f"Unknown scenario '{name}', available: {', '.join(available)}")
