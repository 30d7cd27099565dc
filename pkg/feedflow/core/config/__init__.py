# feedflow/core/config/__init__.py
from .config import (
    DerivedCovariateConfig,
    DistanceTransformConfig,
    EmConfig,
    InnerConfig,
    LinearTermConfig,
    RunConfig,
    ScenarioConfig,
    SimConfig,
    SmoothTermConfig,
    load_run_config,
    load_sim_config,
    scenario_path,
)
from .settings import settings

__all__ = [
    "DerivedCovariateConfig",
    "DistanceTransformConfig",
    "EmConfig",
    "InnerConfig",
    "LinearTermConfig",
    "RunConfig",
    "ScenarioConfig",
    "SimConfig",
    "SmoothTermConfig",
    "load_run_config",
    "load_sim_config",
    "scenario_path",
    "settings",
]
