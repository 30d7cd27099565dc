# feedflow/services/estimation/bfgs.py
"""
Dense BFGS minimisation with a Wolfe line search.

The inverse Hessian approximation is kept as a full matrix; problem sizes here
are a few hundred parameters at most. When the Wolfe search fails, a plain
Armijo backtracking step is tried before the run is stopped with the best
iterate so far.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import line_search

from feedflow.core.config import InnerConfig
from feedflow.core.errors import NumericalError

# Configure logging
logger = logging.getLogger(__name__)

Objective = Callable[[NDArray[np.float64]], float]
Gradient = Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass
class InnerResult:
    x: NDArray[np.float64]
    fun: float
    grad_norm: float
    n_iter: int
    converged: bool
    line_search_failed: bool = False
    message: str = ""


def _backtrack(fun: Objective, x, f, g, direction, cfg: InnerConfig):
    slope = float(g @ direction)
    alpha = 1.0
    for _ in range(cfg.max_backtracks):
        candidate = x + alpha * direction
        value = fun(candidate)
        if np.isfinite(value) and value <= f + cfg.c1 * alpha * slope:
            return alpha, value
        alpha *= 0.5
    return None, None


def minimize_bfgs(
    fun: Objective, grad: Gradient, x0: NDArray[np.float64], cfg: Optional[InnerConfig] = None
) -> InnerResult:
    """Minimise ``fun`` from ``x0``.

    Stops when the max-norm of the gradient drops below cfg.grad_tol or after
    cfg.max_iter iterations. A start that already satisfies the gradient
    criterion returns without iterating.

    Raises:
        NumericalError: If the objective or gradient is not finite at the start.
    """
    cfg = cfg or InnerConfig()
    x = np.asarray(x0, dtype=float).copy()
    f = float(fun(x))
    g = np.asarray(grad(x), dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError(f"Objective or gradient not finite at the starting point (f = {f})")

    n = x.size
    eye = np.eye(n)
    h_inv = eye.copy()
    grad_norm = float(np.max(np.abs(g))) if n else 0.0
    if grad_norm < cfg.grad_tol:
        return InnerResult(x=x, fun=f, grad_norm=grad_norm, n_iter=0, converged=True, message="start is stationary")

    failed = False
    converged = False
    k = 0
    # Makes the first trial step about unit length, as scipy does.
    f_prev = f + np.linalg.norm(g) / 2.0
    while k < cfg.max_iter:
        direction = -h_inv @ g
        if g @ direction >= 0:
            # Not a descent direction; restart from steepest descent.
            h_inv = eye.copy()
            direction = -g

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, _, _, f_new, _, _ = line_search(
                fun, grad, x, direction, gfk=g, old_fval=f, old_old_fval=f_prev, c1=cfg.c1, c2=cfg.c2
            )
        if alpha is None or f_new is None or not np.isfinite(f_new):
            alpha, f_new = _backtrack(fun, x, f, g, direction, cfg)
            if alpha is None:
                failed = True
                logger.warning(f"Line search failed at iteration {k}; keeping best iterate (f = {f:.6f})")
                break

        x_new = x + alpha * direction
        g_new = np.asarray(grad(x_new), dtype=float)
        s = x_new - x
        y = g_new - g
        f_prev = f
        x, f, g = x_new, float(f_new), g_new
        k += 1

        grad_norm = float(np.max(np.abs(g)))
        logger.debug(f"BFGS iteration {k}: f = {f:.8f}, |g|max = {grad_norm:.3e}, step = {alpha:.3e}")
        if grad_norm < cfg.grad_tol:
            converged = True
            break

        sy = float(s @ y)
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            continue
        if k == 1:
            h_inv = (sy / float(y @ y)) * eye
        rho = 1.0 / sy
        left = eye - rho * np.outer(s, y)
        h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)

    message = "converged" if converged else ("line search failed" if failed else "max_iter reached")
    return InnerResult(
        x=x, fun=f, grad_norm=grad_norm, n_iter=k, converged=converged, line_search_failed=failed, message=message
    )
