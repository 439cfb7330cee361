import logging
import math
import time
from typing import Optional, Sequence, Tuple

import numpy as np

from grmfit.core.errors import DimensionError, InnerFailureError, PreconditionError
from grmfit.models.schemas import FitConfig, FitResult, FitStatus, ItemParameters, Method
from grmfit.services import reparam
from grmfit.services.grm import as_itemset, subject_loglik_derivatives, validate_responses
from grmfit.services.interface.estimator_interface import EstimatorInterface
from grmfit.services.types import ItemSet, ModeResult, ResponseMatrix
from grmfit.utils.optimize import minimize_projected_bfgs

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
MAX_NEWTON_STEPS = 100
MAX_HALVINGS = 30


def _joint_rows(
    items: ItemSet, y: np.ndarray, eta: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """g(eta) = loglik - eta^2/2 - log(2 pi)/2 with its first two derivatives, per row."""
    loglik, d1, d2 = subject_loglik_derivatives(items, y, eta)
    return loglik - 0.5 * eta**2 - HALF_LOG_2PI, d1 - eta, d2 - 1.0


def find_modes(
    items: ItemSet,
    y: np.ndarray,
    inner_tolerance: float,
    eta0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior modes of every row: returns (eta_hat, curvature H, Newton steps).

    Newton on the strictly concave joint log-density with step halving; rows stop
    once |g'| < inner_tolerance, then take one polishing Newton step that is kept
    only where it shrinks |g'|.
    """
    n = y.shape[0]
    eta = np.zeros(n) if eta0 is None else np.array(eta0, dtype=float, copy=True)
    steps = np.zeros(n, dtype=int)
    value, d1, d2 = _joint_rows(items, y, eta)

    for _ in range(MAX_NEWTON_STEPS):
        active = np.flatnonzero(np.abs(d1) >= inner_tolerance)
        if active.size == 0:
            break
        y_active = y[active]
        newton = d1[active] / -d2[active]
        t = np.ones(active.size)
        pending = np.arange(active.size)
        for _ in range(MAX_HALVINGS):
            trial = eta[active[pending]] + t[pending] * newton[pending]
            v, g1, g2 = _joint_rows(items, y_active[pending], trial)
            # ascent, or a smaller slope once gains drop below rounding
            ok = (v >= value[active[pending]]) | (np.abs(g1) < np.abs(d1[active[pending]]))
            rows = active[pending[ok]]
            eta[rows], value[rows], d1[rows], d2[rows] = trial[ok], v[ok], g1[ok], g2[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        steps[active] += 1
    else:
        remaining = int(np.sum(np.abs(d1) >= inner_tolerance))
        if remaining:
            raise InnerFailureError(
                f"mode search did not converge for {remaining} subject(s) "
                f"in {MAX_NEWTON_STEPS} Newton steps"
            )

    polished = eta + d1 / -d2
    _, p1, p2 = _joint_rows(items, y, polished)
    better = np.abs(p1) < np.abs(d1)
    eta = np.where(better, polished, eta)
    d2 = np.where(better, p2, d2)

    curvature = -d2
    if not np.all(curvature > 0):
        raise InnerFailureError("non-positive curvature at a posterior mode")
    return eta, curvature, steps


def laplace_rows(
    items: ItemSet,
    y: np.ndarray,
    inner_tolerance: float,
    eta0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row Laplace marginal log-likelihoods and the modes they used."""
    eta, curvature, _ = find_modes(items, y, inner_tolerance, eta0)
    loglik, _, _ = subject_loglik_derivatives(items, y, eta)
    return loglik - 0.5 * eta**2 - 0.5 * np.log(curvature), eta


def _row(items: ItemSet, responses: Sequence[int]) -> np.ndarray:
    row = np.asarray(responses).reshape(1, -1)
    if row.shape[1] != items.n_items:
        raise DimensionError(
            f"response length {row.shape[1]} does not match item count {items.n_items}"
        )
    return validate_responses(items, row)


def joint_logdensity(
    items: Sequence[ItemParameters] | ItemSet, responses: Sequence[int], eta: float
) -> Tuple[float, float, float]:
    """Joint log-density g(eta) of data and standard normal prior, with g' and g''."""
    itemset = as_itemset(items)
    value, d1, d2 = _joint_rows(itemset, _row(itemset, responses), np.array([eta], dtype=float))
    return float(value[0]), float(d1[0]), float(d2[0])


def find_posterior_mode(
    items: Sequence[ItemParameters] | ItemSet,
    responses: Sequence[int],
    inner_tolerance: float = 1e-9,
) -> ModeResult:
    itemset = as_itemset(items)
    eta, curvature, steps = find_modes(itemset, _row(itemset, responses), inner_tolerance)
    return ModeResult(eta_hat=float(eta[0]), curvature=float(curvature[0]), iterations=int(steps[0]))


def marginal_loglik_laplace(
    items: Sequence[ItemParameters] | ItemSet,
    responses: Sequence[int],
    inner_tolerance: float = 1e-9,
) -> float:
    """g(eta_hat) + log(2 pi)/2 - log(H)/2."""
    itemset = as_itemset(items)
    values, _ = laplace_rows(itemset, _row(itemset, responses), inner_tolerance)
    return float(values[0])


def dataset_loglik_laplace(
    items: Sequence[ItemParameters] | ItemSet,
    data: ResponseMatrix,
    inner_tolerance: float = 1e-9,
) -> float:
    itemset = as_itemset(items)
    if data.n_items != itemset.n_items:
        raise DimensionError(
            f"data has {data.n_items} items but {itemset.n_items} item parameters were given"
        )
    values, _ = laplace_rows(itemset, data.responses, inner_tolerance)
    return float(values.sum())


def check_init(data: ResponseMatrix, init: Sequence[ItemParameters]) -> ItemSet:
    """Init must cover the data columns in order."""
    ids = [item.item_id for item in init]
    if len(ids) != data.n_items or ids != [int(i) for i in data.item_ids]:
        raise DimensionError(
            f"init items {ids} do not match data columns {list(map(int, data.item_ids))}"
        )
    return ItemSet.from_parameters(init)


class LaplaceEstimator(EstimatorInterface):
    """Maximizes the summed Laplace marginal likelihood over item parameters."""

    logger = logging.getLogger(__name__)
    method = Method.LAPLACE

    def __init__(self, config: Optional[FitConfig] = None) -> None:
        self.config = config or FitConfig()

    def fit(self, data: ResponseMatrix, init: Sequence[ItemParameters]) -> FitResult:
        start = time.perf_counter()
        cfg = self.config
        itemset = check_init(data, init)
        outside = [item.item_id for item in init if not cfg.bounds.contains(item)]
        if outside:
            raise PreconditionError(f"init items {outside} lie outside the parameter bounds")

        y = data.responses
        ids = itemset.item_ids
        warm = {"eta": np.zeros(data.n_subjects), "last": None}

        def objective(c_flat: np.ndarray) -> float:
            items = reparam.unpack(c_flat, ids)
            values, eta = laplace_rows(items, y, cfg.inner_tolerance, warm["eta"])
            warm["last"] = eta
            return -float(values.sum())

        def on_accept(_: np.ndarray, __: float) -> None:
            warm["eta"] = warm["last"]

        def project(c_flat: np.ndarray) -> np.ndarray:
            return reparam.project(c_flat, cfg.bounds).reshape(-1)

        self.logger.info(
            "Laplace fit started: N=%d M=%d max_iter=%d tol=%.1e",
            data.n_subjects,
            data.n_items,
            cfg.max_outer_iterations,
            cfg.outer_tolerance,
        )
        c0 = reparam.pack(itemset).reshape(-1)
        try:
            outcome = minimize_projected_bfgs(
                objective,
                c0,
                project,
                max_iterations=cfg.max_outer_iterations,
                tolerance=cfg.outer_tolerance,
                on_accept=on_accept,
            )
            status, c_final, loglik = outcome.status, outcome.x, -outcome.fun
            iterations, trace = outcome.iterations, [-v for v in outcome.trace]
        except InnerFailureError as exc:
            self.logger.warning("Laplace fit failed in the mode search: %s", exc)
            status, c_final, loglik, iterations, trace = (
                FitStatus.NUMERICAL_FAILURE,
                c0,
                float("nan"),
                0,
                [],
            )

        estimates = reparam.unpack(c_final, ids).to_parameters() if np.all(np.isfinite(c_final)) else list(init)
        wall_ms = int(round((time.perf_counter() - start) * 1000))
        log = self.logger.info if status is FitStatus.CONVERGED else self.logger.warning
        log(
            "Laplace fit finished: status=%s loglik=%.6f iterations=%d in %.2fs",
            status.value,
            loglik,
            iterations,
            wall_ms / 1000,
        )
        return FitResult(
            estimates=estimates,
            loglik=loglik,
            converged=status is FitStatus.CONVERGED,
            status=status,
            outer_iterations=iterations,
            wall_time_ms=wall_ms,
            method=self.method,
            loglik_trace=trace,
        )


def fit_laplace(
    data: ResponseMatrix, init: Sequence[ItemParameters], config: Optional[FitConfig] = None
) -> FitResult:
    return LaplaceEstimator(config).fit(data, init)
