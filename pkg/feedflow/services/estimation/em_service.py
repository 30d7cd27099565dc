# feedflow/services/estimation/em_service.py
"""
Approximate EM estimation of the penalised flow models.

Each outer iteration maximises the penalised log-likelihood for fixed variance
components (posterior mode of the random effects and spline coefficients),
inverts the observed Fisher matrix at the mode, and then updates the
random-effect covariance and the smoothing parameters from that inverse. The
loop stops once Sigma changes by less than epsilon in relative Frobenius norm.
Progress is judged on the Laplace approximate marginal log-likelihood, since
l_P shifts with the penalty whenever Sigma or lambda move.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

import feedflow.models  # noqa: F401  (registers the model kinds)
from feedflow.core.config import EmConfig, InnerConfig, RunConfig
from feedflow.core.errors import ConvergenceError, FeedflowError
from feedflow.core.registry import ModelRegistry
from feedflow.models.base import FisherInverse, FlowModel, fisher_inverse
from feedflow.models.covariates import CovariateSet, CovariateTable, build_covariates, with_distance_alpha
from feedflow.models.panel import LATENT_LABEL, FeedPanel
from feedflow.models.params import ParamVector, VarianceComponents
from feedflow.services.estimation.bfgs import InnerResult, minimize_bfgs

# Configure logging
logger = logging.getLogger(__name__)

# Relative eigenvalue level below which an updated Sigma is lifted.
SIGMA_JITTER = 1e-8


@dataclass
class TraceRecord:
    """One outer EM iteration."""

    outer_iter: int
    penalized_loglik: float
    laplace_loglik: float
    sigma_rel_change: float
    sigma: NDArray[np.float64]
    lam: NDArray[np.float64]
    inner_iter: int
    inner_converged: bool

    def as_row(self, lambda_names: Sequence[str] = ()) -> Dict[str, Any]:
        row = {
            "outer_iter": self.outer_iter,
            "penalized_loglik": self.penalized_loglik,
            "laplace_loglik": self.laplace_loglik,
            "sigma_rel_change": self.sigma_rel_change,
            "sigma_11": self.sigma[0, 0],
            "sigma_12": self.sigma[0, 1],
            "sigma_22": self.sigma[1, 1],
        }
        names = list(lambda_names) or [str(m) for m in range(self.lam.size)]
        for name, value in zip(names, self.lam):
            row[f"lambda_{name}"] = value
        return row


@dataclass
class FitResult:
    """Estimates of an approximate-EM fit."""

    model_kind: str
    params: ParamVector
    vc: VarianceComponents
    fisher_inv: FisherInverse
    trace: List[TraceRecord]
    converged: bool
    standard_errors: NDArray[np.float64]
    loglik: float
    penalized_loglik: float
    unit_labels: Tuple[str, ...] = ()
    warnings: List[str] = field(default_factory=list)

    @property
    def layout(self):
        return self.params.layout

    def coefficient_table(self) -> pd.DataFrame:
        """Fixed effects with standard errors: name, estimate, std_error."""
        return pd.DataFrame(
            {
                "name": list(self.layout.beta_names),
                "estimate": self.params.beta,
                "std_error": self.standard_errors,
            }
        )

    def random_effects_table(self) -> pd.DataFrame:
        se = self.fisher_inv.unit_standard_errors()
        labels = list(self.unit_labels) or [str(i) for i in range(self.layout.n_units)]
        return pd.DataFrame(
            {
                "station_id": labels,
                "u_out": self.params.u[:, 0],
                "u_in": self.params.u[:, 1],
                "se_out": se[:, 0],
                "se_in": se[:, 1],
            }
        )

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([record.as_row(self.layout.gamma_names) for record in self.trace])

    def sigma_over(self, units: Optional[Iterable[int]] = None) -> NDArray[np.float64]:
        """The Sigma update formula evaluated at the final estimates over a subset of units."""
        return update_sigma(self.params, self.fisher_inv, units)

    def sigma_without_latent(self) -> NDArray[np.float64]:
        """Sigma estimate over the physical stations only."""
        if self.unit_labels and self.unit_labels[-1] == LATENT_LABEL:
            return self.sigma_over(range(self.layout.n_units - 1))
        return self.sigma_over()


def maximize_inner(
    model: FlowModel, params0: ParamVector, vc: VarianceComponents, cfg: Optional[InnerConfig] = None
) -> Tuple[ParamVector, InnerResult]:
    """Maximise the penalised log-likelihood over theta for fixed variance components.

    Returns:
        Tuple of the best iterate and the optimiser report; a failed line search is
        flagged on the report, not raised.
    """
    layout = model.layout

    def objective(theta):
        return -model.penalized_loglik(ParamVector.from_flat(layout, theta), vc)

    def gradient(theta):
        return -model.penalized_score(ParamVector.from_flat(layout, theta), vc)

    result = minimize_bfgs(objective, gradient, params0.flatten(), cfg or InnerConfig())
    return ParamVector.from_flat(layout, result.x), result


def update_sigma(
    params: ParamVector, fisher_inv: FisherInverse, units: Optional[Iterable[int]] = None
) -> NDArray[np.float64]:
    """Sigma = mean over units of (V_{u_i u_i} + u_i u_iᵀ).

    Args:
        params: Current estimates.
        fisher_inv: Inverse observed Fisher matrix at ``params``.
        units: Units to average over; all units by default.
    """
    indices = list(range(params.layout.n_units)) if units is None else list(units)
    total = np.zeros((2, 2))
    for i in indices:
        u = params.u[i]
        total += fisher_inv.unit_block(i) + np.outer(u, u)
    sigma = total / len(indices)
    return 0.5 * (sigma + sigma.T)


def _penalty_pseudo_trace(k: NDArray[np.float64], lam: float) -> float:
    """tr((λK)⁻ K) with the pseudo-inverse taken over the range of K."""
    eigvals = np.linalg.eigvalsh(lam * k)
    keep = eigvals > 1e-10 * max(eigvals.max(), 0.0)
    return float(keep.sum()) / lam


def update_lambda(
    params: ParamVector,
    fisher_inv: FisherInverse,
    vc: VarianceComponents,
    penalties: Sequence[NDArray[np.float64]],
    bounds: Tuple[float, float] = (1e-6, 1e8),
) -> Tuple[NDArray[np.float64], List[str]]:
    """Fellner-Schall update of the smoothing parameters.

    λ_m ← λ_m (tr(S_λ⁻ S_m) − tr(V S_m)) / (γ_mᵀ K_m γ_m), clamped to ``bounds``.

    Returns:
        Tuple of the new smoothing parameters and warning messages for clamped terms.
    """
    lam_min, lam_max = bounds
    names = params.layout.gamma_names
    new = vc.lam.copy()
    warnings: List[str] = []
    for m, k in enumerate(penalties):
        gamma = params.gamma[m]
        lam = float(vc.lam[m])
        denominator = float(gamma @ k @ gamma)
        numerator = _penalty_pseudo_trace(k, lam) - float(np.trace(fisher_inv.gamma_block(m) @ k))
        if denominator <= 0:
            new[m] = lam_max
            warnings.append(f"Smooth '{names[m]}' is in the penalty null space; lambda set to {lam_max:g}")
        elif numerator <= 0:
            new[m] = lam_min
            warnings.append(f"Smooth '{names[m]}' has a nonpositive update numerator; lambda set to {lam_min:g}")
        else:
            new[m] = float(np.clip(lam * numerator / denominator, lam_min, lam_max))
    for message in warnings:
        logger.warning(message)
    return new, warnings


def _lift_sigma(sigma: NDArray[np.float64]) -> Tuple[NDArray[np.float64], Optional[str]]:
    eigvals = np.linalg.eigvalsh(sigma)
    level = SIGMA_JITTER * max(float(eigvals.max()), 1.0)
    if eigvals.min() >= level:
        return sigma, None
    lifted = sigma + (level - eigvals.min()) * np.eye(2)
    return lifted, f"Sigma update was near singular (smallest eigenvalue {eigvals.min():.3e}); lifted to {level:.1e}"


class EmService:
    """Runs the outer approximate-EM loop for any FlowModel."""

    def __init__(self, config: Optional[EmConfig] = None):
        self.config = config or EmConfig()

    def _sigma_units(self, model: FlowModel) -> List[int]:
        return list(range(model.layout.n_units))

    def fit(
        self,
        model: FlowModel,
        params0: Optional[ParamVector] = None,
        vc0: Optional[VarianceComponents] = None,
    ) -> FitResult:
        """Fit ``model`` by approximate EM.

        The loop watches the Laplace approximate marginal log-likelihood, which the
        Sigma and lambda updates ascend; l_P alone moves with the penalty and may fall.

        Raises:
            ConvergenceError: If the Laplace log-likelihood drops by more than
                divergence_tol * max(1, |previous value|) in two consecutive outer iterations.
        """
        cfg = self.config
        params = params0 or model.initial_params()
        vc = vc0 or VarianceComponents.initial(len(model.penalties))
        trace: List[TraceRecord] = []
        notes: List[str] = []
        converged = False
        previous: Optional[float] = None
        drops = 0

        logger.info(f"Fitting {model.kind} model with {model.layout.size} parameters")
        for outer in range(1, cfg.max_outer + 1):
            params, inner = maximize_inner(model, params, vc, cfg.inner)
            if inner.line_search_failed:
                notes.append(f"Outer iteration {outer}: line search failed")
            if not inner.converged and not inner.line_search_failed:
                notes.append(f"Outer iteration {outer}: inner maximisation hit max_iter")

            lp = model.penalized_loglik(params, vc)
            fisher_inv = fisher_inverse(model.observed_fisher(params, vc), model.layout, cfg.eigen_floor)
            laplace = model.laplace_loglik(params, vc, fisher_inv)
            sigma_new, note = _lift_sigma(update_sigma(params, fisher_inv, self._sigma_units(model)))
            if note:
                logger.warning(note)
                notes.append(note)
            lam_new, lam_notes = update_lambda(params, fisher_inv, vc, model.penalties, cfg.lambda_bounds)
            notes.extend(lam_notes)

            rel_change = float(np.linalg.norm(sigma_new - vc.sigma) / np.linalg.norm(vc.sigma))
            trace.append(
                TraceRecord(
                    outer_iter=outer,
                    penalized_loglik=lp,
                    laplace_loglik=laplace,
                    sigma_rel_change=rel_change,
                    sigma=sigma_new,
                    lam=lam_new,
                    inner_iter=inner.n_iter,
                    inner_converged=inner.converged,
                )
            )
            logger.info(
                f"EM iteration {outer}: l_P = {lp:.6f}, Laplace = {laplace:.6f}, "
                f"relative Sigma change = {rel_change:.3e}, lambda = {np.array2string(lam_new, precision=4)}"
            )

            if len(trace) > 1 and lp < trace[-2].penalized_loglik - 1e-6:
                logger.warning(f"l_P fell from {trace[-2].penalized_loglik:.6f} to {lp:.6f} at outer iteration {outer}")

            if previous is not None and laplace < previous - cfg.divergence_tol * max(1.0, abs(previous)):
                drops += 1
                logger.warning(f"Laplace log-likelihood fell from {previous:.6f} to {laplace:.6f}")
                if drops >= 2:
                    raise ConvergenceError(
                        f"EM diverged: Laplace log-likelihood fell in two consecutive iterations (at {outer})",
                        trace=[record.as_row(model.layout.gamma_names) for record in trace],
                    )
            else:
                drops = 0
            previous = laplace

            vc = VarianceComponents(sigma=sigma_new, lam=lam_new)
            if rel_change < cfg.epsilon:
                converged = True
                break

        if not converged:
            notes.append(f"EM stopped after {cfg.max_outer} outer iterations without meeting epsilon")
            logger.warning(notes[-1])

        fisher_inv = fisher_inverse(model.observed_fisher(params, vc), model.layout, cfg.eigen_floor)
        labels = getattr(getattr(model, "panel", None), "unit_labels", None) or tuple(model.station_ids)
        return FitResult(
            model_kind=model.kind,
            params=params,
            vc=vc,
            fisher_inv=fisher_inv,
            trace=trace,
            converged=converged,
            standard_errors=fisher_inv.standard_errors(),
            loglik=model.loglik(params),
            penalized_loglik=model.penalized_loglik(params, vc),
            unit_labels=tuple(labels),
            warnings=notes,
        )


def build_model(panel: FeedPanel, covs: CovariateSet, model_kind: str) -> FlowModel:
    return ModelRegistry.create_model(model_kind, panel, covs)


def fit(panel: FeedPanel, covs: CovariateSet, model_kind: str = "dyadic", cfg: Optional[EmConfig] = None) -> FitResult:
    """Fit the dyadic or station-based difference model to a panel."""
    model = build_model(panel, covs, model_kind)
    return EmService(cfg).fit(model)


def alpha_grid_search(
    panel: FeedPanel, table: CovariateTable, config: RunConfig, alphas: Sequence[float]
) -> Tuple[pd.DataFrame, float]:
    """Fit once per distance-transform alpha and pick the best unpenalised log-likelihood.

    Returns:
        Tuple of a frame (alpha, loglik, penalized_loglik, converged, outer_iterations)
        and the selected alpha.
    """
    rows = []
    for alpha in alphas:
        run = with_distance_alpha(config, alpha)
        try:
            result = fit(panel, build_covariates(table, run), run.model_kind, run.em)
        except FeedflowError as e:
            logger.warning(f"Fit for alpha = {alpha:g} failed: {e}")
            rows.append(
                {"alpha": alpha, "loglik": np.nan, "penalized_loglik": np.nan, "converged": False, "outer_iterations": 0}
            )
            continue
        rows.append(
            {
                "alpha": alpha,
                "loglik": result.loglik,
                "penalized_loglik": result.penalized_loglik,
                "converged": result.converged,
                "outer_iterations": len(result.trace),
            }
        )
        logger.info(f"alpha = {alpha:g}: loglik = {result.loglik:.4f}")
    frame = pd.DataFrame(rows)
    if frame["loglik"].notna().sum() == 0:
        raise ConvergenceError("No fit in the alpha grid succeeded")
    best = float(frame.loc[frame["loglik"].idxmax(), "alpha"])
    return frame, best
