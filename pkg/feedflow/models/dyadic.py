# feedflow/models/dyadic.py
import logging

import numpy as np

from feedflow.core.registry import register_model
from feedflow.models.base import IntensityField, SkellamFlowModel
from feedflow.models.params import ParamVector

# Configure logging
logger = logging.getLogger(__name__)


@register_model("dyadic")
class DyadicFlowModel(SkellamFlowModel):
    """Skellam model with intensities materialised for every pair.

    Supports dyadic covariates such as distances; each evaluation costs
    O(N^2) per timepoint.
    """

    kind = "dyadic"

    def _evaluate_margins(self, params: ParamVector):
        nu = self.nu_field(params)
        field = IntensityField(
            mu_out=nu.sum(axis=1),
            mu_in=nu.sum(axis=0),
            nu_factory=lambda: nu,
            unit_labels=self.panel.unit_labels,
            timepoints=self.panel.timepoints,
        )
        return field, nu

    def _weight_sums(self, field, aux, g1, g2):
        weights = aux * (g2[:, None, :] + g1[None, :, :])
        w_out = weights.sum(axis=1)
        return w_out.sum(axis=0), w_out, weights.sum(axis=0), weights


def margins_dyadic(model: SkellamFlowModel, params: ParamVector, t: int) -> IntensityField:
    """Margins at timepoint t summed over the explicit pair intensities."""
    nu = model.nu_field(params)[:, :, t : t + 1]
    return IntensityField(
        mu_out=nu.sum(axis=1),
        mu_in=nu.sum(axis=0),
        nu_factory=lambda: nu,
        unit_labels=model.panel.unit_labels,
        timepoints=model.panel.timepoints[t : t + 1],
    )
