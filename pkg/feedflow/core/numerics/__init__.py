# feedflow/core/numerics/__init__.py
from .bessel import (
    MAX_SERIES_TERMS,
    THETA_TILDE,
    BesselEval,
    BesselMethod,
    amos_log_bounds,
    bessel_log_and_ratios,
    bessel_ratio,
    bessel_ratio2,
    bessel_ratio_bounds,
    evaluate_log_bessel,
    log_bessel_i,
)
from .skellam import (
    SkellamDerivs,
    SkellamParams,
    skellam_derivs,
    skellam_derivs_array,
    skellam_logpmf,
    skellam_logpmf_array,
)

__all__ = [
    "MAX_SERIES_TERMS",
    "THETA_TILDE",
    "BesselEval",
    "BesselMethod",
    "amos_log_bounds",
    "bessel_log_and_ratios",
    "bessel_ratio",
    "bessel_ratio2",
    "bessel_ratio_bounds",
    "evaluate_log_bessel",
    "log_bessel_i",
    "SkellamDerivs",
    "SkellamParams",
    "skellam_derivs",
    "skellam_derivs_array",
    "skellam_logpmf",
    "skellam_logpmf_array",
]
