# feedflow/models/poisson.py
import logging
from typing import Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln

from feedflow.core.errors import ConfigError, DataError
from feedflow.core.registry import register_model
from feedflow.models.base import ETA_CLIP, FlowModel
from feedflow.models.covariates import CovariateSet
from feedflow.models.params import ParamVector

# Configure logging
logger = logging.getLogger(__name__)


@register_model("poisson")
class PoissonTripModel(FlowModel):
    """Benchmark model for fully observed trips: Y_{ij,t} ~ Poi(exp(eta_{ij,t})).

    Uses the same design, penalties and random effects as the difference
    models but only the N physical stations as units.
    """

    kind = "poisson"

    def __init__(self, trips: ArrayLike, covs: CovariateSet, station_ids: Sequence[str], timepoints: Any = None):
        y = np.asarray(trips, dtype=float)
        expected = (covs.n_stations, covs.n_stations, covs.n_times)
        if y.shape != expected:
            raise ConfigError(f"Trip counts need shape {expected}, got {y.shape}")
        if np.any(~np.isfinite(y)) or np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("Trip counts must be non-negative integers")
        super().__init__(covs, n_units=covs.n_stations, latent=False, station_ids=station_ids, timepoints=timepoints)
        self.trips = y
        self._log_factorial = float(gammaln(y + 1.0).sum())

    def _eta(self, params: ParamVector) -> NDArray[np.float64]:
        return np.clip(self.eta_field(params), -ETA_CLIP, ETA_CLIP)

    def loglik(self, params: ParamVector) -> float:
        eta = self._eta(params)
        return float((self.trips * eta - np.exp(eta)).sum() - self._log_factorial)

    def loglik_gradient(self, params: ParamVector) -> NDArray[np.float64]:
        residual = self.trips - np.exp(self._eta(params))
        w_out = residual.sum(axis=1)
        w_in = residual.sum(axis=0)
        coef_grad = self.design.contract(w_out.sum(axis=0), w_out, w_in, residual)
        return np.concatenate([coef_grad, self._unit_gradient(w_out, w_in)])

    def loglik_hessian(self, params: ParamVector) -> NDArray[np.float64]:
        hessian = -self._pair_outer(np.exp(self._eta(params)))
        return 0.5 * (hessian + hessian.T)

    def initial_params(self) -> ParamVector:
        params = ParamVector.zeros(self.layout)
        if self.covs.intercept:
            beta = params.beta.copy()
            beta[0] = np.log(float(self.trips.mean()) + 0.01)
            params = params.replace(beta=beta)
        return params
