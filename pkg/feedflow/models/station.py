# feedflow/models/station.py
import logging

import numpy as np
from scipy.special import logsumexp

from feedflow.core.errors import ConfigError
from feedflow.core.registry import register_model
from feedflow.models.base import ETA_CLIP, IntensityField, SkellamFlowModel
from feedflow.models.covariates import CovariateSet
from feedflow.models.panel import FeedPanel
from feedflow.models.params import ParamVector

# Configure logging
logger = logging.getLogger(__name__)


def _softmax(values, lse):
    return np.exp(values - lse[None, :])


@register_model("station")
class StationFlowModel(SkellamFlowModel):
    """Skellam model whose predictor splits into an origin and a destination part.

    Without dyadic covariates nu_{ij,t} = exp(A_{i,t} + B_{j,t}), so every margin
    is one exponential of a log-sum-exp:

        mu_out_{i,t} = exp(A_{i,t} + log Σ_j exp(B_{j,t}))

    with the latent self-loop left out of the sums for w. Margins and the score
    cost O(N) per timepoint; the Hessian still goes through the pair grid.
    """

    kind = "station"

    def __init__(self, panel: FeedPanel, covs: CovariateSet):
        if covs.has_dyadic:
            raise ConfigError("The station-based model cannot use dyadic covariates; use the dyadic model")
        super().__init__(panel, covs)

    def _evaluate_margins(self, params: ParamVector):
        n = self.n_stations
        time_part, out_part, in_part, _ = self.design.parts(params.coef)
        origin = time_part[None, :] + out_part + params.u_out[:, None]
        destination = in_part + params.u_in[:, None]

        lse_dest_all = logsumexp(destination, axis=0)
        lse_dest_phys = logsumexp(destination[:n], axis=0)
        lse_orig_all = logsumexp(origin, axis=0)
        lse_orig_phys = logsumexp(origin[:n], axis=0)

        log_out = origin + lse_dest_all[None, :]
        log_out[n] = origin[n] + lse_dest_phys
        log_in = destination + lse_orig_all[None, :]
        log_in[n] = destination[n] + lse_orig_phys

        field = IntensityField(
            mu_out=np.exp(np.clip(log_out, -ETA_CLIP, ETA_CLIP)),
            mu_in=np.exp(np.clip(log_in, -ETA_CLIP, ETA_CLIP)),
            nu_factory=lambda: self.nu_field(params),
            unit_labels=self.panel.unit_labels,
            timepoints=self.panel.timepoints,
        )
        aux = {
            "dest_all": _softmax(destination, lse_dest_all),
            "dest_phys": _softmax(destination[:n], lse_dest_phys),
            "orig_all": _softmax(origin, lse_orig_all),
            "orig_phys": _softmax(origin[:n], lse_orig_phys),
        }
        return field, aux

    def _weight_sums(self, field, aux, g1, g2):
        # Σ_j nu_ij g1_j = mu_out_i times the destination-share weighted mean of g1.
        n = self.n_stations
        g1_mean = (aux["dest_all"] * g1).sum(axis=0)
        g1_mean_w = (aux["dest_phys"] * g1[:n]).sum(axis=0)
        g2_mean = (aux["orig_all"] * g2).sum(axis=0)
        g2_mean_w = (aux["orig_phys"] * g2[:n]).sum(axis=0)

        w_out = field.mu_out * (g2 + g1_mean[None, :])
        w_out[n] = field.mu_out[n] * (g2[n] + g1_mean_w)
        w_in = field.mu_in * (g1 + g2_mean[None, :])
        w_in[n] = field.mu_in[n] * (g1[n] + g2_mean_w)
        return w_out.sum(axis=0), w_out, w_in, None


def margins_station(model: StationFlowModel, params: ParamVector, t: int) -> IntensityField:
    """Margins at timepoint t from the log-sum-exp decomposition."""
    return model.margins(params).at(t)
