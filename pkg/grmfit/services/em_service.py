"""Fixed-grid Gauss-Hermite EM (Bock-Aitkin style) for the graded response model."""

import logging
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit, logsumexp

from grmfit.core.errors import DegenerateItemError, DimensionError, ItemUpdateError
from grmfit.models.schemas import (
    EM_GUARD_BOUNDS,
    N_CATEGORIES,
    N_THRESHOLDS,
    FitConfig,
    FitResult,
    FitStatus,
    ItemParameters,
    Method,
    ParameterBounds,
)
from grmfit.services import reparam
from grmfit.services.grm import as_itemset, item_log_probabilities, pattern_loglik_grid
from grmfit.services.interface.estimator_interface import EstimatorInterface
from grmfit.services.laplace_service import check_init
from grmfit.services.quadrature import gauss_hermite_normal
from grmfit.services.types import ExpectedCounts, ItemSet, QuadratureRule, ResponseMatrix

logger = logging.getLogger(__name__)

SLOPE_START_RANGE = (0.2, 5.0)
START_THRESHOLD_LIMIT = 8.0
START_MIN_GAP = 0.05
MAX_ITEM_NEWTON_STEPS = 50
MAX_DAMPING_ESCALATIONS = 50
MAX_ITEM_HALVINGS = 30
BOUND_RTOL = 1e-9
BOUND_ATOL = 1e-9


def slope_from_correlation(r: float) -> float:
    """a = 2r / sqrt(1 - r^2), clipped to [0.2, 5]."""
    if not np.isfinite(r):
        r = 0.0
    r = float(np.clip(r, -0.999999, 0.999999))
    return float(np.clip(2.0 * r / np.sqrt(1.0 - r * r), *SLOPE_START_RANGE))


def order_thresholds(b: np.ndarray, min_gap: float = START_MIN_GAP) -> np.ndarray:
    out = np.array(b, dtype=float, copy=True)
    for k in range(1, out.shape[0]):
        out[k] = max(out[k], out[k - 1] + min_gap)
    return out


def thresholds_from_exceedance(
    exceedance: Sequence[float], a: float, n_subjects: Optional[int] = None
) -> np.ndarray:
    """b_s = -logit(p_s) / a, clipped to +-8, then forced apart by at least 0.05."""
    p = np.asarray(exceedance, dtype=float)
    eps = 0.5 / n_subjects if n_subjects else 1e-6
    p = np.clip(p, eps, 1.0 - eps)
    b = np.clip(-logit(p) / a, -START_THRESHOLD_LIMIT, START_THRESHOLD_LIMIT)
    return order_thresholds(b)


def starting_values(data: ResponseMatrix) -> List[ItemParameters]:
    """Correlation-based starting values for every item column."""
    y = data.responses.astype(float)
    total = y.sum(axis=1)
    items: List[ItemParameters] = []
    for j, item_id in enumerate(data.item_ids):
        column = y[:, j]
        if np.unique(column).size < 2:
            raise DegenerateItemError(f"item {int(item_id)} shows a single category")
        rest = total - column
        if np.std(rest) > 0:
            r = float(np.corrcoef(column, rest)[0, 1])
        else:
            r = 0.0
        a = slope_from_correlation(r)
        exceedance = [(column >= s).mean() for s in range(1, N_CATEGORIES)]
        b = thresholds_from_exceedance(exceedance, a, data.n_subjects)
        items.append(ItemParameters(item_id=int(item_id), a=a, b=tuple(float(v) for v in b)))
    logger.debug("starting values computed for %d items", len(items))
    return items


def posterior_weights(
    items: ItemSet, data: ResponseMatrix, rule: QuadratureRule
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior node weights pi_iq (N, Q) and per-subject log marginals (N,)."""
    if data.n_items != items.n_items:
        raise DimensionError(
            f"data has {data.n_items} items but {items.n_items} item parameters were given"
        )
    log_joint = pattern_loglik_grid(items, data.responses, rule.nodes) + rule.log_weights
    log_marginal = logsumexp(log_joint, axis=1)
    return np.exp(log_joint - log_marginal[:, None]), log_marginal


def e_step(
    data: ResponseMatrix, items: Sequence[ItemParameters] | ItemSet, rule: QuadratureRule
) -> ExpectedCounts:
    itemset = as_itemset(items)
    post, log_marginal = posterior_weights(itemset, data, rule)
    onehot = (data.responses[:, :, None] == np.arange(N_CATEGORIES)).astype(float)
    return ExpectedCounts(
        node_mass=post.sum(axis=0),
        category_mass=np.einsum("nms,nq->msq", onehot, post),
        loglik=float(log_marginal.sum()),
    )


def item_objective(c_row: np.ndarray, counts: np.ndarray, nodes: np.ndarray) -> float:
    """Q_j = sum_q sum_s r_sq log P_s(x_q) for one item in ordered coordinates."""
    item = reparam.unpack(c_row, np.zeros(1, dtype=int))
    return float((counts * item_log_probabilities(item, nodes)[0]).sum())


def item_derivatives(
    c_row: np.ndarray, counts: np.ndarray, nodes: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Q_j with its gradient and Hessian in ordered coordinates.

    Derivatives are accumulated on the natural scale (a, b1..b4) and pulled back
    through the coordinate map.
    """
    item = reparam.unpack(c_row, np.zeros(1, dtype=int))
    a, b = float(item.a[0]), item.b[0]
    grad = np.zeros(5)
    hess = np.zeros((5, 5))

    # sigma(a (x - b_k)) enters category k+1 as log sigma and category k as log(1 - sigma)
    for k in range(N_THRESHOLDS):
        dx = nodes - b[k]
        p = expit(a * dx)
        w = p * (1.0 - p)
        upper, lower = counts[k + 1], counts[k]
        e = upper * (1.0 - p) - lower * p
        total = (upper + lower) * w
        grad[0] += np.sum(e * dx)
        grad[k + 1] += -a * np.sum(e)
        hess[0, 0] -= np.sum(total * dx * dx)
        hess[k + 1, k + 1] -= a * a * np.sum(total)
        hess[0, k + 1] += a * np.sum(total * dx) - np.sum(e)

    # log(1 - exp(-a * gap)) for the interior categories
    for s in range(1, N_THRESHOLDS):
        mass = counts[s].sum()
        gap = b[s] - b[s - 1]
        k1 = 1.0 / np.expm1(a * gap)
        k2 = -(k1 + k1 * k1)
        grad[0] += mass * k1 * gap
        grad[s] -= mass * k1 * a
        grad[s + 1] += mass * k1 * a
        hess[0, 0] += mass * k2 * gap * gap
        hess[0, s] += mass * (-k2 * gap * a - k1)
        hess[0, s + 1] += mass * (k2 * gap * a + k1)
        hess[s, s] += mass * k2 * a * a
        hess[s + 1, s + 1] += mass * k2 * a * a
        hess[s, s + 1] -= mass * k2 * a * a

    hess = np.triu(hess) + np.triu(hess, 1).T
    jac = reparam.natural_jacobian(c_row)
    grad_c = jac.T @ grad
    hess_c = jac.T @ hess @ jac + reparam.natural_curvature(c_row, grad)
    return item_objective(c_row, counts, nodes), grad_c, hess_c


def _ascent_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Newton direction, Levenberg-damped until the Hessian is negative definite."""
    scale = max(float(np.max(np.abs(np.diag(hess)))), 1.0)
    damping = 0.0
    for escalation in range(MAX_DAMPING_ESCALATIONS + 1):
        try:
            chol = np.linalg.cholesky(-(hess - damping * np.eye(hess.shape[0])))
        except np.linalg.LinAlgError:
            damping = 1e-8 * scale if escalation == 0 else damping * 10.0
            continue
        return np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
    raise ItemUpdateError(
        f"item Hessian not negative definite after {MAX_DAMPING_ESCALATIONS} damping escalations"
    )


def maximize_item(
    c_row: np.ndarray,
    counts: np.ndarray,
    nodes: np.ndarray,
    bounds: ParameterBounds,
) -> np.ndarray:
    """Newton ascent on Q_j, warm-started at c_row; Q_j never decreases."""
    c = reparam.project(c_row, bounds)[0]
    value = item_objective(c, counts, nodes)
    for _ in range(MAX_ITEM_NEWTON_STEPS):
        _, grad, hess = item_derivatives(c, counts, nodes)
        step = _ascent_direction(grad, hess)
        if np.max(np.abs(step)) < 1e-10:
            break
        t = 1.0
        for _ in range(MAX_ITEM_HALVINGS):
            trial = reparam.project(c + t * step, bounds)[0]
            trial_value = item_objective(trial, counts, nodes)
            if trial_value >= value:
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(trial - c))
        c, value = trial, trial_value
        if moved < 1e-10:
            break
    return c


def m_step(
    counts: ExpectedCounts,
    items: Sequence[ItemParameters] | ItemSet,
    rule: QuadratureRule,
    bounds: ParameterBounds = EM_GUARD_BOUNDS,
) -> List[ItemParameters]:
    itemset = as_itemset(items)
    if counts.n_items != itemset.n_items or counts.category_mass.shape[2] != rule.size:
        raise DimensionError("expected counts do not match the items or the quadrature rule")
    c = reparam.pack(itemset)
    for j in range(itemset.n_items):
        c[j] = maximize_item(c[j], counts.category_mass[j], rule.nodes, bounds)
    return reparam.unpack(c, itemset.item_ids).to_parameters()


def projected_change(old: ItemSet, new: ItemSet, bounds: ParameterBounds) -> float:
    """Largest parameter move, ignoring parameters held on a bound.

    An item whose slope sits on a bound is left out entirely, thresholds included.
    """
    slope_held = np.isclose(new.a, bounds.a_lower, rtol=BOUND_RTOL, atol=0) | np.isclose(
        new.a, bounds.a_upper, rtol=BOUND_RTOL, atol=0
    )
    b_held = (np.abs(new.b - bounds.b_lower) <= BOUND_ATOL) | (np.abs(new.b - bounds.b_upper) <= BOUND_ATOL)
    da = np.where(slope_held, 0.0, np.abs(old.a - new.a))
    db = np.where(slope_held[:, None] | b_held, 0.0, np.abs(old.b - new.b))
    return float(max(da.max(initial=0.0), db.max(initial=0.0)))


class GhqEmEstimator(EstimatorInterface):
    """Alternates E-steps and item-wise M-steps on a fixed Gauss-Hermite grid."""

    logger = logging.getLogger(__name__)
    method = Method.GHQ_EM

    def __init__(
        self, config: Optional[FitConfig] = None, rule: Optional[QuadratureRule] = None
    ) -> None:
        self.config = config or FitConfig()
        self.rule = rule or gauss_hermite_normal(self.config.quadrature_points)

    @property
    def bounds(self) -> ParameterBounds:
        return self.config.bounds if self.config.em_bounded else EM_GUARD_BOUNDS

    def fit(self, data: ResponseMatrix, init: Sequence[ItemParameters]) -> FitResult:
        start = time.perf_counter()
        cfg = self.config
        current = check_init(data, init)
        trace: List[float] = []
        status = FitStatus.MAX_ITERATIONS
        iterations = 0
        self.logger.info(
            "GHQ-EM fit started: N=%d M=%d Q=%d max_iter=%d tol=%.1e",
            data.n_subjects,
            data.n_items,
            self.rule.size,
            cfg.max_outer_iterations,
            cfg.em_tolerance,
        )
        try:
            for iterations in range(1, cfg.max_outer_iterations + 1):
                counts = e_step(data, current, self.rule)
                if trace and counts.loglik < trace[-1] - 1e-10:
                    self.logger.warning(
                        "EM log-likelihood decreased by %.3e at iteration %d",
                        trace[-1] - counts.loglik,
                        iterations,
                    )
                trace.append(counts.loglik)
                updated = ItemSet.from_parameters(m_step(counts, current, self.rule, self.bounds))
                change = projected_change(current, updated, self.bounds)
                current = updated
                self.logger.debug(
                    "EM iteration %d: loglik=%.8f max_change=%.3e", iterations, counts.loglik, change
                )
                if change < cfg.em_tolerance:
                    status = FitStatus.CONVERGED
                    break
            final = e_step(data, current, self.rule).loglik
            trace.append(final)
        except ItemUpdateError as exc:
            self.logger.warning("GHQ-EM fit failed in the M-step: %s", exc)
            status, final = FitStatus.NUMERICAL_FAILURE, float("nan")

        if status is not FitStatus.NUMERICAL_FAILURE and not np.isfinite(final):
            status = FitStatus.NUMERICAL_FAILURE
        wall_ms = int(round((time.perf_counter() - start) * 1000))
        log = self.logger.info if status is FitStatus.CONVERGED else self.logger.warning
        log(
            "GHQ-EM fit finished: status=%s loglik=%.6f iterations=%d in %.2fs",
            status.value,
            final,
            iterations,
            wall_ms / 1000,
        )
        return FitResult(
            estimates=current.to_parameters(),
            loglik=final,
            converged=status is FitStatus.CONVERGED,
            status=status,
            outer_iterations=iterations,
            wall_time_ms=wall_ms,
            method=self.method,
            loglik_trace=trace,
        )


def fit_ghq_em(
    data: ResponseMatrix,
    init: Sequence[ItemParameters],
    config: Optional[FitConfig] = None,
    rule: Optional[QuadratureRule] = None,
) -> FitResult:
    return GhqEmEstimator(config, rule).fit(data, init)
