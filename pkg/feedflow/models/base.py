# feedflow/models/base.py
"""
Base classes of the likelihood models.

A model turns a ParamVector into intensities nu_{ij,t} = exp(eta_{ij,t}) over a
pair grid and scores them against data. FlowModel owns everything that does
not depend on the response: the design, the parameter layout, the quadratic
penalties and the fixed-order reductions of pair weights. SkellamFlowModel
adds the difference likelihood shared by the dyadic and station-based
parameterisations.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from feedflow.core.errors import ConfigError, DomainError, NumericalError
from feedflow.core.numerics import skellam_derivs_array
from feedflow.models.covariates import CovariateSet
from feedflow.models.design import Design
from feedflow.models.panel import FeedPanel, StationKey, resolve_unit
from feedflow.models.params import ParamLayout, ParamVector, VarianceComponents

# Configure logging
logger = logging.getLogger(__name__)

# Linear predictors are clipped to this magnitude before exponentiation.
ETA_CLIP = 50.0
DEFAULT_EIGEN_FLOOR = 1e-8


class IntensityField:
    """Margins mu_out, mu_in of shape (R, T) with the pair intensities nu built on first access."""

    def __init__(
        self,
        mu_out: NDArray[np.float64],
        mu_in: NDArray[np.float64],
        nu_factory: Callable[[], NDArray[np.float64]],
        unit_labels: Tuple[str, ...] = (),
        timepoints: Any = None,
    ):
        self.mu_out = mu_out
        self.mu_in = mu_in
        self.unit_labels = unit_labels
        self.timepoints = timepoints
        self._nu_factory = nu_factory
        self._nu: Optional[NDArray[np.float64]] = None

    @property
    def nu(self) -> NDArray[np.float64]:
        """Pair intensities (R, R, T); the (w, w) entry is zero."""
        if self._nu is None:
            self._nu = self._nu_factory()
        return self._nu

    @property
    def n_rows(self) -> int:
        return self.mu_out.shape[0]

    def at(self, t: int) -> "IntensityField":
        """Slice of a single timepoint, keeping a time axis of length one."""
        return IntensityField(
            self.mu_out[:, t : t + 1],
            self.mu_in[:, t : t + 1],
            lambda: self.nu[:, :, t : t + 1],
            self.unit_labels,
            None if self.timepoints is None else self.timepoints[t : t + 1],
        )


@dataclass(frozen=True, eq=False)
class FisherInverse:
    """V = F^{-1} with accessors for the blocks used by the EM updates."""

    matrix: NDArray[np.float64] = field(repr=False)
    layout: ParamLayout
    n_floored: int = 0
    min_eigenvalue: float = 0.0
    log_det_fisher: float = 0.0

    def beta_block(self) -> NDArray[np.float64]:
        s = self.layout.beta_slice
        return self.matrix[s, s]

    def gamma_block(self, m: int) -> NDArray[np.float64]:
        s = self.layout.gamma_slice(m)
        return self.matrix[s, s]

    def unit_block(self, i: int) -> NDArray[np.float64]:
        idx = self.layout.unit_indices(i)
        return self.matrix[np.ix_(idx, idx)]

    def standard_errors(self) -> NDArray[np.float64]:
        """sqrt(diag(V_beta_beta))."""
        return np.sqrt(np.clip(np.diag(self.beta_block()), 0.0, None))

    def unit_standard_errors(self) -> NDArray[np.float64]:
        """(n_units, 2) standard errors of (u_out, u_in)."""
        diag = np.diag(self.matrix)[self.layout.u_slice].reshape(self.layout.n_units, 2)
        return np.sqrt(np.clip(diag, 0.0, None))


def fisher_inverse(
    fisher: NDArray[np.float64], layout: ParamLayout, floor: float = DEFAULT_EIGEN_FLOOR
) -> FisherInverse:
    """Invert an observed Fisher matrix through its eigendecomposition.

    Eigenvalues below floor * (largest eigenvalue) are raised to that level, which
    replaces an indefinite matrix by a nearby positive definite one.

    Raises:
        NumericalError: If the matrix is not finite or has no positive eigenvalue.
    """
    if not np.all(np.isfinite(fisher)):
        raise NumericalError("Observed Fisher matrix contains non-finite entries")
    sym = 0.5 * (fisher + fisher.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    largest = float(eigvals[-1])
    if not largest > 0:
        raise NumericalError(
            f"Observed Fisher matrix has no positive eigenvalue (largest {largest:.3e})", eigenvalue=largest
        )
    threshold = floor * largest
    low = eigvals < threshold
    n_floored = int(low.sum())
    if n_floored:
        logger.warning(
            f"Floored {n_floored} of {eigvals.size} Fisher eigenvalues at {threshold:.3e} "
            f"(smallest was {eigvals[0]:.3e})"
        )
    floored = np.where(low, threshold, eigvals)
    inverse = (eigvecs / floored) @ eigvecs.T
    return FisherInverse(
        matrix=0.5 * (inverse + inverse.T),
        layout=layout,
        n_floored=n_floored,
        min_eigenvalue=float(eigvals[0]),
        log_det_fisher=float(np.log(floored).sum()),
    )


class FlowModel(ABC):
    """A penalised log-likelihood over flow intensities on a pair grid.

    Subclasses provide the unpenalised log-likelihood with its gradient and
    Hessian; the penalty on spline coefficients and random effects is shared.
    """

    kind: str = ""

    def __init__(
        self,
        covs: CovariateSet,
        n_units: int,
        latent: bool,
        station_ids: Tuple[str, ...],
        timepoints: Any = None,
    ):
        self.covs = covs
        self.design = Design(covs, latent=latent)
        self.layout = ParamLayout(
            beta_names=tuple(covs.beta_names),
            gamma_names=tuple(covs.smooth_names),
            gamma_sizes=tuple(covs.gamma_sizes),
            n_units=n_units,
        )
        self.penalties: List[NDArray[np.float64]] = [term.basis.penalty for term in covs.smooth]
        self.penalty_ranks: List[int] = [int(np.linalg.matrix_rank(k)) for k in self.penalties]
        self.station_ids = tuple(station_ids)
        self.timepoints = timepoints

    @property
    def n_stations(self) -> int:
        return self.covs.n_stations

    @property
    def n_times(self) -> int:
        return self.covs.n_times

    @abstractmethod
    def loglik(self, params: ParamVector) -> float:
        pass

    @abstractmethod
    def loglik_gradient(self, params: ParamVector) -> NDArray[np.float64]:
        pass

    @abstractmethod
    def loglik_hessian(self, params: ParamVector) -> NDArray[np.float64]:
        pass

    @abstractmethod
    def initial_params(self) -> ParamVector:
        pass

    def describe(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "n_stations": self.n_stations,
            "n_times": self.n_times,
            "n_params": self.layout.size,
            "beta": list(self.layout.beta_names),
            "smooth": list(self.layout.gamma_names),
        }

    def _check_vc(self, vc: VarianceComponents) -> None:
        if vc.lam.shape[0] != len(self.penalties):
            raise DomainError(f"Expected {len(self.penalties)} smoothing parameters, got {vc.lam.shape[0]}")

    def penalty(self, params: ParamVector, vc: VarianceComponents) -> float:
        """½ Σ_m λ_m γ_mᵀ K_m γ_m + ½ Σ_i u_iᵀ Σ⁻¹ u_i."""
        self._check_vc(vc)
        total = 0.0
        for m, k in enumerate(self.penalties):
            g = params.gamma[m]
            total += 0.5 * vc.lam[m] * float(g @ k @ g)
        total += 0.5 * float(np.einsum("ia,ab,ib->", params.u, vc.sigma_inv, params.u))
        return total

    def penalized_loglik(self, params: ParamVector, vc: VarianceComponents) -> float:
        self._check_vc(vc)
        return self.loglik(params) - self.penalty(params, vc)

    def laplace_loglik(self, params: ParamVector, vc: VarianceComponents, fisher_inv: FisherInverse) -> float:
        """Laplace approximation of the marginal log-likelihood of (Sigma, lambda), up to a constant.

        l_P(θ̂) − ½ n_units log|Σ| + ½ Σ_m rank(K_m) log λ_m − ½ log|F(θ̂)|, where θ̂ is the
        inner mode for ``vc`` and ``fisher_inv`` inverts the observed Fisher matrix there.
        The outer EM updates ascend this quantity, unlike l_P itself.
        """
        _, log_det_sigma = np.linalg.slogdet(vc.sigma)
        value = self.penalized_loglik(params, vc) - 0.5 * self.layout.n_units * log_det_sigma
        for rank, lam in zip(self.penalty_ranks, vc.lam):
            value += 0.5 * rank * np.log(lam)
        return float(value - 0.5 * fisher_inv.log_det_fisher)

    def penalized_score(self, params: ParamVector, vc: VarianceComponents) -> NDArray[np.float64]:
        """Gradient of the penalised log-likelihood in the flat parameter order."""
        self._check_vc(vc)
        grad = self.loglik_gradient(params).copy()
        for m, k in enumerate(self.penalties):
            grad[self.layout.gamma_slice(m)] -= vc.lam[m] * (k @ params.gamma[m])
        grad[self.layout.u_slice] -= (params.u @ vc.sigma_inv).ravel()
        return grad

    def observed_fisher(self, params: ParamVector, vc: VarianceComponents) -> NDArray[np.float64]:
        """Negative Hessian of the penalised log-likelihood, exactly symmetric."""
        self._check_vc(vc)
        fisher = -self.loglik_hessian(params)
        for m, k in enumerate(self.penalties):
            s = self.layout.gamma_slice(m)
            fisher[s, s] += vc.lam[m] * k
        sigma_inv = vc.sigma_inv
        for i in range(self.layout.n_units):
            idx = self.layout.unit_indices(i)
            fisher[np.ix_(idx, idx)] += sigma_inv
        return 0.5 * (fisher + fisher.T)

    def eta_field(self, params: ParamVector) -> NDArray[np.float64]:
        return self.design.eta(params.coef, params.u_out, params.u_in)

    def nu_field(self, params: ParamVector) -> NDArray[np.float64]:
        """exp(eta) over the pair grid, with the latent self-loop set to zero."""
        nu = np.exp(np.clip(self.eta_field(params), -ETA_CLIP, ETA_CLIP))
        if self.design.latent:
            nu[-1, -1, :] = 0.0
        return nu

    def _unit_gradient(self, w_out: NDArray[np.float64], w_in: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.stack([w_out.sum(axis=1), w_in.sum(axis=1)], axis=1).ravel()

    def _pair_outer(self, weights: NDArray[np.float64]) -> NDArray[np.float64]:
        """Σ_{ijt} W_{ijt} x_{ijt} x_{ijt}ᵀ over the full parameter vector.

        x_{ijt} stacks the design row with the indicators of u_out_i and u_in_j;
        the indicator parts are assembled from sums of W instead of dense rows.
        """
        p = self.layout.n_coef
        uo, ui = self.layout.out_indices, self.layout.in_indices
        out = np.zeros((self.layout.size, self.layout.size))

        for times in self.design.time_chunks():
            x = self.design.pair_rows(times)
            w = weights[:, :, times].transpose(2, 0, 1)
            flat_x = x.reshape(-1, p)
            out[:p, :p] += flat_x.T @ (w.reshape(-1)[:, None] * flat_x)
            cross_out = np.einsum("tij,tijp->ip", w, x)
            cross_in = np.einsum("tij,tijp->jp", w, x)
            out[uo, :p] += cross_out
            out[:p, uo] += cross_out.T
            out[ui, :p] += cross_in
            out[:p, ui] += cross_in.T

        pair_sums = weights.sum(axis=2)
        out[uo, uo] += pair_sums.sum(axis=1)
        out[ui, ui] += pair_sums.sum(axis=0)
        out[np.ix_(uo, ui)] += pair_sums
        out[np.ix_(ui, uo)] += pair_sums.T
        return out


class SkellamFlowModel(FlowModel):
    """Skellam likelihood of station differences, D_{i,t} ~ Skellam(mu_in_{i,t}, mu_out_{i,t}).

    Units are the N stations followed by the latent station w; the pair grid
    excludes only the latent self-loop (w, w).
    """

    def __init__(self, panel: FeedPanel, covs: CovariateSet):
        if (covs.n_stations, covs.n_times) != (panel.n_stations, panel.n_times):
            raise ConfigError(
                f"Covariates cover {covs.n_stations} stations x {covs.n_times} timepoints, "
                f"panel has {panel.n_stations} x {panel.n_times}"
            )
        super().__init__(
            covs,
            n_units=panel.n_stations + 1,
            latent=True,
            station_ids=panel.station_ids,
            timepoints=panel.timepoints,
        )
        self.panel = panel
        self.observed = panel.observed
        self._cache_key: Optional[bytes] = None
        self._cache: Optional[Dict[str, Any]] = None

    @abstractmethod
    def _evaluate_margins(self, params: ParamVector) -> Tuple[IntensityField, Any]:
        """Return the margins and whatever auxiliary state _weight_sums needs."""

    @abstractmethod
    def _weight_sums(self, field: IntensityField, aux: Any, g1: NDArray, g2: NDArray):
        """Aggregate W_{ijt} = nu_{ijt}(g2_{it} + g1_{jt}) by scope.

        Returns:
            Tuple (over all pairs (T,), over destinations (R, T), over origins (R, T),
            per pair (R, R, T) or None).
        """

    def margins(self, params: ParamVector) -> IntensityField:
        field, _ = self._evaluate_margins(params)
        return field

    def margins_at(self, params: ParamVector, t: int) -> IntensityField:
        return self.margins(params).at(t)

    def eta(self, params: ParamVector, i: StationKey, j: StationKey, t: int) -> float:
        """Linear predictor of the pair (i, j) at timepoint t; ``"w"`` names the latent station.

        Raises:
            DomainError: For the latent self-loop (w, w).
        """
        row = resolve_unit(i, self.n_stations, self.station_ids)
        col = resolve_unit(j, self.n_stations, self.station_ids)
        if row == col == self.n_stations:
            raise DomainError("No self-loops for the latent station")
        x = self.design.pair_rows(np.array([t]))[0, row, col]
        return float(x @ params.coef + params.u_out[row] + params.u_in[col])

    def nu(self, params: ParamVector, i: StationKey, j: StationKey, t: int) -> float:
        return float(np.exp(np.clip(self.eta(params, i, j, t), -ETA_CLIP, ETA_CLIP)))

    def _state(self, params: ParamVector) -> Dict[str, Any]:
        key = params.flatten().tobytes()
        if key == self._cache_key and self._cache is not None:
            return self._cache

        field, aux = self._evaluate_margins(params)
        mask = self.observed
        self._check_finite(field.mu_out, field.mu_in, mask)

        shape = mask.shape
        derivs = skellam_derivs_array(field.mu_in[mask], field.mu_out[mask], self.panel.differences[mask])
        ll_cells = np.full(shape, np.nan)
        ll_cells[mask] = derivs.ll
        bad = mask & ~np.isfinite(ll_cells)
        if np.any(bad):
            i, t = (int(v) for v in np.argwhere(bad)[0])
            raise NumericalError(
                f"Log-likelihood is not finite at station {self.panel.unit_labels[i]}, timepoint {t}", cell=(i, t)
            )

        def scatter(values):
            full = np.zeros(shape)
            full[mask] = values
            return full

        state = {
            "field": field,
            "aux": aux,
            "ll": float(derivs.ll.sum()),
            "g1": scatter(derivs.d_theta1),
            "g2": scatter(derivs.d_theta2),
            "h11": scatter(derivs.d2_theta1),
            "h22": scatter(derivs.d2_theta2),
            "h12": scatter(derivs.d2_cross),
        }
        self._cache_key, self._cache = key, state
        return state

    def _check_finite(self, mu_out: NDArray, mu_in: NDArray, mask: NDArray) -> None:
        bad = mask & ~(np.isfinite(mu_out) & np.isfinite(mu_in))
        if np.any(bad):
            i, t = (int(v) for v in np.argwhere(bad)[0])
            raise NumericalError(
                f"Intensity is not finite at station {self.panel.unit_labels[i]}, timepoint {t}", cell=(i, t)
            )

    def loglik(self, params: ParamVector) -> float:
        """Sum of Skellam log-pmfs over the observed (unit, timepoint) cells."""
        return self._state(params)["ll"]

    def loglik_gradient(self, params: ParamVector) -> NDArray[np.float64]:
        state = self._state(params)
        w_time, w_out, w_in, w_dyad = self._weight_sums(state["field"], state["aux"], state["g1"], state["g2"])
        return np.concatenate([self.design.contract(w_time, w_out, w_in, w_dyad), self._unit_gradient(w_out, w_in)])

    def loglik_hessian(self, params: ParamVector) -> NDArray[np.float64]:
        """Hessian of the Skellam log-likelihood.

        With a_in = d mu_in / d theta and a_out = d mu_out / d theta for each unit row,
        H = Σ [h11 a_in a_inᵀ + h12 (a_in a_outᵀ + a_out a_inᵀ) + h22 a_out a_outᵀ]
        + Σ_{ijt} nu_{ijt} (g2_{it} + g1_{jt}) x_{ijt} x_{ijt}ᵀ.
        """
        state = self._state(params)
        field = state["field"]
        nu = self.nu_field(params)
        g1, g2 = state["g1"], state["g2"]
        p, r, size = self.layout.n_coef, self.design.n_rows, self.layout.size
        uo, ui = self.layout.out_indices, self.layout.in_indices
        units = np.arange(r)

        hessian = np.zeros((size, size))
        for times in self.design.time_chunks():
            x = self.design.pair_rows(times)
            nu_c = nu[:, :, times].transpose(2, 0, 1)
            n_t = times.size

            a_out = np.zeros((n_t, r, size))
            a_out[:, :, :p] = np.einsum("tij,tijp->tip", nu_c, x)
            a_out[:, units, uo] = field.mu_out[:, times].T
            a_out[:, :, ui] += nu_c

            a_in = np.zeros((n_t, r, size))
            a_in[:, :, :p] = np.einsum("tij,tijp->tjp", nu_c, x)
            a_in[:, units, ui] = field.mu_in[:, times].T
            a_in[:, :, uo] += nu_c.transpose(0, 2, 1)

            a_out = a_out.reshape(-1, size)
            a_in = a_in.reshape(-1, size)
            h11 = state["h11"][:, times].T.reshape(-1, 1)
            h22 = state["h22"][:, times].T.reshape(-1, 1)
            h12 = state["h12"][:, times].T.reshape(-1, 1)
            cross = a_in.T @ (h12 * a_out)
            hessian += a_in.T @ (h11 * a_in) + a_out.T @ (h22 * a_out) + cross + cross.T

        weights = nu * (g2[:, None, :] + g1[None, :, :])
        hessian += self._pair_outer(weights)
        return 0.5 * (hessian + hessian.T)

    def initial_params(self) -> ParamVector:
        """beta = 0 apart from an intercept of log(mean |D| + 0.01) over the physical stations."""
        params = ParamVector.zeros(self.layout)
        if self.covs.intercept:
            d = self.panel.differences[: self.n_stations]
            mean_abs = float(np.nanmean(np.abs(d))) if np.isfinite(d).any() else 0.0
            beta = params.beta.copy()
            beta[0] = np.log(mean_abs + 0.01)
            params = params.replace(beta=beta)
        return params
