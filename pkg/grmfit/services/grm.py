"""Graded response model: category probabilities, pattern likelihood, total score.

Category masses use the factorization

    P(Y = s) = sigma(x_s) * sigma(-x_{s+1}) * (1 - exp(-a * (b_{s+1} - b_s)))

with x_s = a * (psi - b_s), x_0 = +inf, x_5 = -inf. Every factor is evaluated in
a stable form, so masses are never negative and their logs never overflow.
"""

import math
from typing import Sequence, Tuple

import numpy as np
from scipy.special import expit, log_expit

from grmfit.core.errors import DimensionError, DomainError
from grmfit.models.schemas import (
    N_CATEGORIES,
    N_THRESHOLDS,
    ItemParameters,
    SlopeInterceptParameters,
)
from grmfit.services.types import ItemSet

PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


def as_itemset(items: ItemSet | Sequence[ItemParameters]) -> ItemSet:
    return items if isinstance(items, ItemSet) else ItemSet.from_parameters(items)


def _logits(items: ItemSet, psi: np.ndarray) -> np.ndarray:
    """x = a * (psi - b) padded with +inf / -inf: shape psi.shape + (M, 6)."""
    psi = np.asarray(psi, dtype=float)
    x = items.a[:, None] * (psi[..., None, None] - items.b)
    pad_shape = x.shape[:-1] + (1,)
    return np.concatenate(
        [np.full(pad_shape, np.inf), x, np.full(pad_shape, -np.inf)], axis=-1
    )


def _log_gap_terms(items: ItemSet) -> np.ndarray:
    """log(1 - exp(-a * gap_s)) per item and category, shape (M, 5); 0 at both ends."""
    m = items.n_items
    b_pad = np.concatenate(
        [np.full((m, 1), -np.inf), items.b, np.full((m, 1), np.inf)], axis=1
    )
    t = items.a[:, None] * np.diff(b_pad, axis=1)
    return np.log(-np.expm1(-t))


def log_category_probabilities_grid(items: ItemSet, psi: np.ndarray) -> np.ndarray:
    """Unfloored log P(Y_j = s | psi), shape psi.shape + (M, 5)."""
    x = _logits(items, psi)
    return log_expit(x[..., :N_CATEGORIES]) + log_expit(-x[..., 1:]) + _log_gap_terms(items)


def category_probabilities_grid(items: ItemSet, psi: np.ndarray) -> np.ndarray:
    """P(Y_j = s | psi), shape psi.shape + (M, 5)."""
    x = _logits(items, psi)
    m = items.n_items
    b_pad = np.concatenate(
        [np.full((m, 1), -np.inf), items.b, np.full((m, 1), np.inf)], axis=1
    )
    gap = -np.expm1(-items.a[:, None] * np.diff(b_pad, axis=1))
    return expit(x[..., :N_CATEGORIES]) * expit(-x[..., 1:]) * gap


def item_log_probabilities(items: ItemSet, nodes: np.ndarray) -> np.ndarray:
    """Floored log P(Y_j = s | x_q) laid out as (M, 5, Q)."""
    logp = log_category_probabilities_grid(items, np.asarray(nodes, dtype=float))
    return np.maximum(np.moveaxis(logp, 0, -1), LOG_PROB_FLOOR)


def validate_responses(items: ItemSet, responses: np.ndarray) -> np.ndarray:
    y = np.asarray(responses)
    if y.shape[-1] != items.n_items:
        raise DimensionError(
            f"response length {y.shape[-1]} does not match item count {items.n_items}"
        )
    if y.size and (np.any(y != np.round(y)) or y.min() < 0 or y.max() >= N_CATEGORIES):
        raise DomainError(f"responses must be integers in 0..{N_CATEGORIES - 1}")
    return y.astype(np.int64)


def pattern_loglik_grid(items: ItemSet, responses: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Pattern log-likelihood of every row of `responses` (N, M) at every node: (N, Q)."""
    y = validate_responses(items, np.atleast_2d(responses))
    nodes = np.asarray(nodes, dtype=float)
    if items.n_items == 0:
        return np.zeros((y.shape[0], nodes.shape[0]))
    logp = item_log_probabilities(items, nodes)  # (M, 5, Q)
    picked = logp[np.arange(items.n_items)[None, :], y]  # (N, M, Q)
    return picked.sum(axis=1)


def subject_loglik_derivatives(
    items: ItemSet, responses: np.ndarray, psi: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pattern log-likelihood and its first two psi-derivatives, one psi per row.

    responses (N, M), psi (N,) -> three (N,) arrays. Uses
    d/dpsi log P_s = a (1 - P*_s - P*_{s+1}) and
    d2/dpsi2 log P_s = -a^2 (W_s + W_{s+1}), W = P* (1 - P*).
    """
    y = validate_responses(items, np.atleast_2d(responses))
    psi = np.asarray(psi, dtype=float).reshape(-1)
    if psi.shape[0] != y.shape[0]:
        raise DimensionError("one latent value per response row is required")
    if items.n_items == 0:
        zeros = np.zeros(y.shape[0])
        return zeros, zeros.copy(), zeros.copy()
    x = _logits(items, psi)  # (N, M, 6)
    idx = y[..., None]
    x_lo = np.take_along_axis(x, idx, axis=-1)[..., 0]
    x_hi = np.take_along_axis(x, idx + 1, axis=-1)[..., 0]
    gap = _log_gap_terms(items)[np.arange(items.n_items)[None, :], y]
    logp = np.maximum(log_expit(x_lo) + log_expit(-x_hi) + gap, LOG_PROB_FLOOR)

    p_lo, p_hi = expit(x_lo), expit(x_hi)
    a = items.a[None, :]
    d1 = (a * (1.0 - p_lo - p_hi)).sum(axis=1)
    d2 = -(a**2 * (p_lo * (1.0 - p_lo) + p_hi * (1.0 - p_hi))).sum(axis=1)
    return logp.sum(axis=1), d1, d2


def prob_at_least(item: ItemParameters, s: int, psi: float) -> float:
    """P(Y >= s | psi) for s in 1..4."""
    if s not in range(1, N_THRESHOLDS + 1):
        raise DomainError(f"category index must be in 1..{N_THRESHOLDS}, got {s}")
    return float(expit(item.a * (psi - item.b[s - 1])))


def category_probabilities(item: ItemParameters, psi: float) -> np.ndarray:
    """P(Y = s | psi) for s = 0..4."""
    return category_probabilities_grid(ItemSet.from_parameters([item]), np.asarray(psi))[0]


def pattern_loglik(
    items: Sequence[ItemParameters] | ItemSet, responses: Sequence[int], psi: float
) -> float:
    value, _, _ = pattern_loglik_derivatives(items, responses, psi)
    return value


def pattern_loglik_derivatives(
    items: Sequence[ItemParameters] | ItemSet, responses: Sequence[int], psi: float
) -> Tuple[float, float, float]:
    """Pattern log-likelihood with analytic first and second psi-derivatives."""
    itemset = as_itemset(items)
    row = np.asarray(responses).reshape(1, -1)
    if row.shape[1] != itemset.n_items:
        raise DimensionError(
            f"response length {row.shape[1]} does not match item count {itemset.n_items}"
        )
    value, d1, d2 = subject_loglik_derivatives(itemset, row, np.array([psi]))
    return float(value[0]), float(d1[0]), float(d2[0])


def expected_total_score(
    items: Sequence[ItemParameters] | ItemSet, psi: float | np.ndarray
) -> float | np.ndarray:
    """Sum over items of sum_s s * P(Y = s | psi), i.e. sum_s P(Y >= s | psi)."""
    itemset = as_itemset(items)
    if itemset.n_items == 0:
        raise DomainError("expected total score needs at least one item")
    psi_arr = np.asarray(psi, dtype=float)
    x = itemset.a[:, None] * (psi_arr[..., None, None] - itemset.b)
    score = expit(x).sum(axis=(-2, -1))
    return float(score) if score.ndim == 0 else score


def to_slope_intercept(item: ItemParameters) -> SlopeInterceptParameters:
    if not item.a > 0:
        raise DomainError(f"discrimination must be positive, got {item.a}")
    return SlopeInterceptParameters(
        item_id=item.item_id, a=item.a, d=tuple(-item.a * b for b in item.b)
    )


def from_slope_intercept(item: SlopeInterceptParameters) -> ItemParameters:
    if not item.a > 0:
        raise DomainError(f"discrimination must be positive, got {item.a}")
    return ItemParameters(item_id=item.item_id, a=item.a, b=tuple(-d / item.a for d in item.d))
