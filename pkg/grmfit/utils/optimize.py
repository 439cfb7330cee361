"""Projected quasi-Newton minimization with finite-difference gradients."""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from grmfit.core.errors import GrmError
from grmfit.models.schemas import FitStatus

logger = logging.getLogger(__name__)

CENTRAL_STEP = 1e-5
ROUNDING = 1e-13

Objective = Callable[[np.ndarray], float]
Projection = Callable[[np.ndarray], np.ndarray]


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    fun: float
    status: FitStatus
    iterations: int
    gradient: np.ndarray
    trace: List[float] = field(default_factory=list)


def forward_difference_gradient(
    fun: Objective, x: np.ndarray, f0: float, rel_step: float = 1e-6
) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        h = rel_step * max(abs(x[i]), 1.0)
        shifted = x.copy()
        shifted[i] += h
        grad[i] = (fun(shifted) - f0) / h
    return grad


def central_difference_gradient(
    fun: Objective, x: np.ndarray, rel_step: float = CENTRAL_STEP
) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        h = rel_step * max(abs(x[i]), 1.0)
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fun(up) - fun(down)) / (2.0 * h)
    return grad


def projected_gradient(x: np.ndarray, g: np.ndarray, project: Projection) -> np.ndarray:
    """Zero where a bound is active and the gradient pushes against it."""
    return x - project(x - g)


def _safe_eval(fun: Objective, x: np.ndarray) -> float:
    try:
        value = fun(x)
    except (GrmError, FloatingPointError):
        return np.inf
    return value if np.isfinite(value) else np.inf


def minimize_projected_bfgs(
    fun: Objective,
    x0: np.ndarray,
    project: Projection,
    *,
    max_iterations: int = 500,
    tolerance: float = 1e-7,
    gradient_tolerance: Optional[float] = None,
    rel_step: float = 1e-6,
    max_step: float = 1.0,
    max_halvings: int = 40,
    armijo: float = 1e-4,
    on_accept: Optional[Callable[[np.ndarray, float], None]] = None,
) -> OptimizeOutcome:
    """Minimize `fun` keeping iterates feasible through `project`.

    BFGS on the inverse Hessian, backtracking (halving) line search with an Armijo
    condition, feasibility restored by projecting every trial point. Gradients are
    forward differences until the first small objective change (or the first failed
    line search), central differences from then on. Converged requires both a
    relative objective change below `tolerance` and a central-difference projected
    gradient with max-norm below `gradient_tolerance` (default 10 * tolerance).
    Errors raised by `fun` while computing a gradient propagate.
    """
    gtol = 10.0 * tolerance if gradient_tolerance is None else gradient_tolerance
    x = project(np.asarray(x0, dtype=float).copy())
    f = _safe_eval(fun, x)
    if not np.isfinite(f):
        return OptimizeOutcome(x, f, FitStatus.NUMERICAL_FAILURE, 0, np.full_like(x, np.nan))
    if on_accept is not None:
        on_accept(x, f)

    central = False

    def gradient(point: np.ndarray, value: float) -> np.ndarray:
        if central:
            return central_difference_gradient(fun, point)
        return forward_difference_gradient(fun, point, value, rel_step)

    def stationary(point: np.ndarray, grad: np.ndarray) -> bool:
        return central and float(np.max(np.abs(projected_gradient(point, grad, project)))) < gtol

    g = gradient(x, f)
    if not np.all(np.isfinite(g)):
        return OptimizeOutcome(x, f, FitStatus.NUMERICAL_FAILURE, 0, g, [f])

    n = x.shape[0]
    h_inv = np.eye(n)
    trace = [f]

    for iteration in range(1, max_iterations + 1):
        direction = -h_inv @ g
        if not direction @ g < 0:
            h_inv = np.eye(n)
            direction = -g
        largest = np.max(np.abs(direction))
        if largest > max_step:
            direction *= max_step / largest

        accepted = False
        moved = False
        t = 1.0
        # changes within rounding of f count as no increase
        slack = ROUNDING * max(abs(f), 1.0) if central else 0.0
        for _ in range(max_halvings):
            trial = project(x + t * direction)
            step = trial - x
            if np.max(np.abs(step)) > 1e-14:
                moved = True
                f_trial = _safe_eval(fun, trial)
                if f_trial <= f + armijo * (g @ step) + slack:
                    accepted = True
                    break
            t *= 0.5

        if not accepted:
            if not moved:
                logger.debug("projection blocks every step at iteration %d", iteration)
                return OptimizeOutcome(x, f, FitStatus.BOUNDARY_STUCK, iteration, g, trace)
            if not central:
                central = True
                h_inv = np.eye(n)
                g = gradient(x, f)
                continue
            if stationary(x, g):
                return OptimizeOutcome(x, f, FitStatus.CONVERGED, iteration, g, trace)
            if not np.allclose(h_inv, np.eye(n)):
                h_inv = np.eye(n)
                continue
            logger.debug("line search failed at iteration %d (f=%.6f)", iteration, f)
            return OptimizeOutcome(x, f, FitStatus.LINE_SEARCH_FAILURE, iteration, g, trace)

        if on_accept is not None:
            on_accept(trial, f_trial)
        relative_change = abs(f - f_trial) / max(abs(f), 1.0)
        if relative_change < tolerance and not central:
            central = True
            g = central_difference_gradient(fun, x)
        g_new = gradient(trial, f_trial)
        if not np.all(np.isfinite(g_new)):
            return OptimizeOutcome(trial, f_trial, FitStatus.NUMERICAL_FAILURE, iteration, g_new, trace)

        s = trial - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if iteration == 1 or np.allclose(h_inv, np.eye(n)):
                h_inv = np.eye(n) * (sy / (y @ y))
            rho = 1.0 / sy
            v = np.eye(n) - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)

        x, f, g = trial, f_trial, g_new
        trace.append(f)
        logger.debug(
            "iteration %d: f=%.10f rel_change=%.3e central=%s", iteration, f, relative_change, central
        )
        if relative_change < tolerance and stationary(x, g):
            return OptimizeOutcome(x, f, FitStatus.CONVERGED, iteration, g, trace)

    return OptimizeOutcome(x, f, FitStatus.MAX_ITERATIONS, max_iterations, g, trace)
