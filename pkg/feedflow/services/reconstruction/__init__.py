# feedflow/services/reconstruction/__init__.py
from feedflow.services.reconstruction.flows import (
    EvalReport,
    FlowEstimate,
    concordance_slope,
    evaluate,
    probability_shares,
    reconstruct,
)

__all__ = ["EvalReport", "FlowEstimate", "concordance_slope", "evaluate", "probability_shares", "reconstruct"]
