# feedflow/services/estimation/__init__.py
from feedflow.services.estimation.bfgs import InnerResult, minimize_bfgs
from feedflow.services.estimation.em_service import (
    EmService,
    FitResult,
    TraceRecord,
    alpha_grid_search,
    build_model,
    fit,
    maximize_inner,
    update_lambda,
    update_sigma,
)
from feedflow.services.estimation.reporting import FitRecord, load_fit, save_fit, smooth_band, write_fit_outputs

__all__ = [
    "EmService",
    "FitRecord",
    "FitResult",
    "InnerResult",
    "TraceRecord",
    "alpha_grid_search",
    "build_model",
    "fit",
    "load_fit",
    "maximize_inner",
    "minimize_bfgs",
    "save_fit",
    "smooth_band",
    "update_lambda",
    "update_sigma",
    "write_fit_outputs",
]
