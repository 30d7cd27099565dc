# feedflow/models/__init__.py
from .base import ETA_CLIP, FisherInverse, FlowModel, IntensityField, SkellamFlowModel, fisher_inverse
from .covariates import (
    CovariateSet,
    CovariateTable,
    LinearTerm,
    SmoothTerm,
    build_covariates,
    distance_transform,
)
from .design import Design
from .dyadic import DyadicFlowModel, margins_dyadic
from .panel import LATENT_LABEL, FeedPanel
from .params import ParamLayout, ParamVector, VarianceComponents
from .poisson import PoissonTripModel
from .splines import (
    SmoothTermBasis,
    SmoothTermSpec,
    build_basis,
    evaluate_row,
    penalty,
    quadratic_penalty,
)
from .station import StationFlowModel, margins_station

__all__ = [
    "ETA_CLIP",
    "LATENT_LABEL",
    "CovariateSet",
    "CovariateTable",
    "Design",
    "DyadicFlowModel",
    "FeedPanel",
    "FisherInverse",
    "FlowModel",
    "IntensityField",
    "LinearTerm",
    "ParamLayout",
    "ParamVector",
    "PoissonTripModel",
    "SkellamFlowModel",
    "SmoothTerm",
    "SmoothTermBasis",
    "SmoothTermSpec",
    "StationFlowModel",
    "VarianceComponents",
    "build_basis",
    "build_covariates",
    "distance_transform",
    "evaluate_row",
    "fisher_inverse",
    "margins_dyadic",
    "margins_station",
    "penalty",
    "quadratic_penalty",
]
