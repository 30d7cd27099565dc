# feedflow/models/params.py
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from feedflow.core.errors import DomainError

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamLayout:
    """Positions of every parameter block in the flat vector.

    The flat order is (beta, gamma_1, ..., gamma_M, u_1, ..., u_N, u_w); each
    random effect contributes the pair (u_out, u_in).
    """

    beta_names: Tuple[str, ...]
    gamma_names: Tuple[str, ...]
    gamma_sizes: Tuple[int, ...]
    n_units: int

    def __post_init__(self):
        if len(self.gamma_names) != len(self.gamma_sizes):
            raise DomainError("Every smooth term needs a coefficient count")

    @property
    def n_beta(self) -> int:
        return len(self.beta_names)

    @property
    def n_coef(self) -> int:
        """Number of fixed and spline coefficients, i.e. design columns."""
        return self.n_beta + sum(self.gamma_sizes)

    @property
    def size(self) -> int:
        return self.n_coef + 2 * self.n_units

    @property
    def beta_slice(self) -> slice:
        return slice(0, self.n_beta)

    def gamma_slice(self, m: int) -> slice:
        start = self.n_beta + sum(self.gamma_sizes[:m])
        return slice(start, start + self.gamma_sizes[m])

    @property
    def u_slice(self) -> slice:
        return slice(self.n_coef, self.size)

    def unit_indices(self, i: int) -> NDArray[np.int64]:
        """Flat indices of (u_out_i, u_in_i)."""
        start = self.n_coef + 2 * i
        return np.array([start, start + 1])

    @property
    def out_indices(self) -> NDArray[np.int64]:
        return self.n_coef + 2 * np.arange(self.n_units)

    @property
    def in_indices(self) -> NDArray[np.int64]:
        return self.out_indices + 1

    def penalty_matrices(self, penalties: Sequence[NDArray[np.float64]]) -> List[NDArray[np.float64]]:
        """Each K_m embedded in a zero matrix of full dimension (S_m)."""
        out = []
        for m, k in enumerate(penalties):
            s = np.zeros((self.size, self.size))
            block = self.gamma_slice(m)
            s[block, block] = k
            out.append(s)
        return out


@dataclass(frozen=True, eq=False)
class ParamVector:
    """theta = (beta, gamma_1..gamma_M, u) with u holding one (u_out, u_in) row per unit."""

    layout: ParamLayout
    beta: NDArray[np.float64]
    gamma: Tuple[NDArray[np.float64], ...]
    u: NDArray[np.float64]

    def __post_init__(self):
        if self.beta.shape != (self.layout.n_beta,):
            raise DomainError(f"beta needs {self.layout.n_beta} entries, got {self.beta.shape}")
        if tuple(g.shape[0] for g in self.gamma) != self.layout.gamma_sizes:
            raise DomainError(f"gamma blocks need sizes {self.layout.gamma_sizes}")
        if self.u.shape != (self.layout.n_units, 2):
            raise DomainError(f"u needs shape {(self.layout.n_units, 2)}, got {self.u.shape}")

    @property
    def coef(self) -> NDArray[np.float64]:
        """beta followed by all spline coefficients, aligned with the design columns."""
        return np.concatenate([self.beta, *self.gamma]) if self.gamma else self.beta.copy()

    @property
    def u_out(self) -> NDArray[np.float64]:
        return self.u[:, 0]

    @property
    def u_in(self) -> NDArray[np.float64]:
        return self.u[:, 1]

    def flatten(self) -> NDArray[np.float64]:
        return np.concatenate([self.coef, self.u.ravel()])

    @classmethod
    def from_flat(cls, layout: ParamLayout, theta: ArrayLike) -> "ParamVector":
        vec = np.asarray(theta, dtype=float)
        if vec.shape != (layout.size,):
            raise DomainError(f"Parameter vector needs {layout.size} entries, got {vec.shape}")
        gamma = tuple(vec[layout.gamma_slice(m)].copy() for m in range(len(layout.gamma_sizes)))
        return cls(
            layout=layout,
            beta=vec[layout.beta_slice].copy(),
            gamma=gamma,
            u=vec[layout.u_slice].reshape(layout.n_units, 2).copy(),
        )

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "ParamVector":
        return cls.from_flat(layout, np.zeros(layout.size))

    def replace(
        self,
        beta: Optional[ArrayLike] = None,
        gamma: Optional[Sequence[ArrayLike]] = None,
        u: Optional[ArrayLike] = None,
    ) -> "ParamVector":
        return ParamVector(
            layout=self.layout,
            beta=self.beta.copy() if beta is None else np.asarray(beta, dtype=float),
            gamma=self.gamma if gamma is None else tuple(np.asarray(g, dtype=float) for g in gamma),
            u=self.u.copy() if u is None else np.asarray(u, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class VarianceComponents:
    """Random-effect covariance Sigma and one smoothing parameter per smooth term."""

    sigma: NDArray[np.float64]
    lam: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (2, 2) or not np.allclose(sigma, sigma.T):
            raise DomainError(f"Sigma must be a symmetric 2x2 matrix, got {sigma.tolist()}")
        if not np.all(np.isfinite(sigma)) or np.linalg.eigvalsh(sigma).min() <= 0:
            raise DomainError(f"Sigma must be positive definite, got {sigma.tolist()}")
        lam = np.asarray(self.lam, dtype=float).ravel()
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise DomainError(f"Smoothing parameters must be positive, got {lam.tolist()}")
        object.__setattr__(self, "sigma", 0.5 * (sigma + sigma.T))
        object.__setattr__(self, "lam", lam)

    @property
    def sigma_inv(self) -> NDArray[np.float64]:
        return np.linalg.inv(self.sigma)

    @classmethod
    def initial(cls, n_smooth: int, sigma_scale: float = 0.5) -> "VarianceComponents":
        return cls(sigma=sigma_scale * np.eye(2), lam=np.ones(n_smooth))
