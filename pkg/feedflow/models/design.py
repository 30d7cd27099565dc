# feedflow/models/design.py
import logging
from typing import Iterator, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from feedflow.models.covariates import CovariateSet

# Configure logging
logger = logging.getLogger(__name__)

# Upper bound on the entries of one pair_rows() chunk.
CHUNK_ENTRIES = 4_000_000


class Design:
    """Design columns of the linear predictor grouped by scope.

    Column p of the full design belongs to exactly one scope; its values live in
    the scope's own array so that no (pair x time x column) tensor is built
    except in bounded chunks. Rows and columns of the pair grid run over
    ``n_rows`` units: the N stations, followed by w when ``latent`` is set.
    """

    def __init__(self, covs: CovariateSet, latent: bool = True):
        self.n_stations = covs.n_stations
        self.n_times = covs.n_times
        self.latent = latent
        self.n_rows = self.n_stations + (1 if latent else 0)

        n, t = self.n_stations, self.n_times
        blocks = {"time": [], "station_out": [], "station_in": [], "dyadic": []}
        self.column_names: List[str] = []

        def add(scope: str, values: NDArray[np.float64], name: str):
            blocks[scope].append((len(self.column_names), values))
            self.column_names.append(name)

        if covs.intercept:
            add("time", np.ones(t), "(Intercept)")
        for term in covs.linear:
            add(term.scope, term.values, term.name)
        for term in covs.smooth:
            rows = term.basis.design(term.values)
            for r in range(term.num_basis):
                add(term.scope, rows[..., r], f"{term.name}[{r}]")

        self.n_coef = len(self.column_names)
        self.time_cols, self.x_time = self._stack(blocks["time"], (t,))
        self.out_cols, self.x_out = self._stack(blocks["station_out"], (n, t))
        self.in_cols, self.x_in = self._stack(blocks["station_in"], (n, t))

        dyadic = blocks["dyadic"]
        dyad_times = max((v.shape[2] for _, v in dyadic), default=1)
        self.dyad_cols, self.x_dyad = self._stack(
            [(c, np.broadcast_to(v, (n, n, dyad_times))) for c, v in dyadic], (n, n, dyad_times)
        )

    @staticmethod
    def _stack(block, shape: Tuple[int, ...]) -> Tuple[NDArray[np.int64], NDArray[np.float64]]:
        cols = np.array([c for c, _ in block], dtype=np.int64)
        if not block:
            return cols, np.zeros(shape + (0,))
        return cols, np.stack([np.asarray(v, dtype=float) for _, v in block], axis=-1)

    @property
    def has_dyadic(self) -> bool:
        return self.dyad_cols.size > 0

    def parts(self, coef: NDArray[np.float64]):
        """Scope-wise contributions of the design to the linear predictor.

        Returns:
            Tuple (time (T,), out (R, T), in (R, T), dyadic (N, N, T) or None);
            latent rows of the station parts are zero.
        """
        n, r, t = self.n_stations, self.n_rows, self.n_times
        time_part = self.x_time @ coef[self.time_cols]
        out_part = np.zeros((r, t))
        out_part[:n] = self.x_out @ coef[self.out_cols]
        in_part = np.zeros((r, t))
        in_part[:n] = self.x_in @ coef[self.in_cols]
        dyad_part = None
        if self.has_dyadic:
            dyad_part = np.broadcast_to(self.x_dyad @ coef[self.dyad_cols], (n, n, t))
        return time_part, out_part, in_part, dyad_part

    def eta(self, coef: NDArray[np.float64], u_out: NDArray[np.float64], u_in: NDArray[np.float64]):
        """Linear predictor over the full (R, R, T) pair grid, random effects included."""
        n = self.n_stations
        time_part, out_part, in_part, dyad_part = self.parts(coef)
        out_part = out_part + u_out[:, None]
        in_part = in_part + u_in[:, None]
        eta = time_part[None, None, :] + out_part[:, None, :] + in_part[None, :, :]
        if dyad_part is not None:
            eta[:n, :n] += dyad_part
        return eta

    def contract(
        self,
        w_time: NDArray[np.float64],
        w_out: NDArray[np.float64],
        w_in: NDArray[np.float64],
        w_dyad: Optional[NDArray[np.float64]] = None,
    ) -> NDArray[np.float64]:
        """Sum of pair weights times design rows: sum_{ijt} W_{ijt} x_{ijt}.

        Args:
            w_time: Weights summed over all pairs, shape (T,).
            w_out: Weights summed over destinations, shape (R, T).
            w_in: Weights summed over origins, shape (R, T).
            w_dyad: Pair weights (R, R, T); needed only when dyadic columns exist.
        """
        n = self.n_stations
        grad = np.zeros(self.n_coef)
        grad[self.time_cols] = self.x_time.T @ w_time
        grad[self.out_cols] = np.einsum("itp,it->p", self.x_out, w_out[:n])
        grad[self.in_cols] = np.einsum("itp,it->p", self.x_in, w_in[:n])
        if self.has_dyadic:
            if w_dyad is None:
                raise ValueError("Dyadic design columns need pair weights")
            weights = w_dyad[:n, :n]
            if self.x_dyad.shape[2] == 1:
                grad[self.dyad_cols] = np.einsum("ijp,ij->p", self.x_dyad[:, :, 0], weights.sum(axis=2))
            else:
                grad[self.dyad_cols] = np.einsum("ijtp,ijt->p", self.x_dyad, weights)
        return grad

    def pair_rows(self, times: NDArray[np.int64]) -> NDArray[np.float64]:
        """Dense design rows x_{ij,t} for the given timepoints, shape (len(times), R, R, P)."""
        n, r = self.n_stations, self.n_rows
        rows = np.zeros((times.size, r, r, self.n_coef))
        rows[:, :, :, self.time_cols] = self.x_time[times][:, None, None, :]
        if self.out_cols.size:
            out = self.x_out[:, times].transpose(1, 0, 2)
            rows[:, :n, :, self.out_cols] = out[:, :, None, :]
        if self.in_cols.size:
            inn = self.x_in[:, times].transpose(1, 0, 2)
            rows[:, :, :n, self.in_cols] = inn[:, None, :, :]
        if self.has_dyadic:
            dyad_times = times if self.x_dyad.shape[2] > 1 else np.zeros_like(times)
            rows[:, :n, :n, self.dyad_cols] = self.x_dyad[:, :, dyad_times].transpose(2, 0, 1, 3)
        return rows

    def time_chunks(self) -> Iterator[NDArray[np.int64]]:
        per_time = max(1, self.n_rows * self.n_rows * max(self.n_coef, 1))
        size = max(1, CHUNK_ENTRIES // per_time)
        for start in range(0, self.n_times, size):
            yield np.arange(start, min(start + size, self.n_times))
