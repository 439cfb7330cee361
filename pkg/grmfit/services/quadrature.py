"""Gauss-Hermite rules for the standard normal density and GHQ marginal likelihoods."""

import logging
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from grmfit.core.errors import DimensionError, DomainError, ResourceError
from grmfit.models.schemas import ItemParameters
from grmfit.services.grm import as_itemset, pattern_loglik_grid
from grmfit.services.types import ItemSet, QuadratureRule, ResponseMatrix

logger = logging.getLogger(__name__)

MAX_NODES = 10_000
RESCALE_AT = 1e100


def _orthonormal_hermite(x: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(p_q, p_{q-1}, log_scale) of the orthonormal He recurrence at ``x``.

    p_k = He_k / sqrt(k!). Both returned values share the factor
    exp(-log_scale), applied whenever |p_k| grows past RESCALE_AT.
    """
    p_prev = np.zeros_like(x)
    p = np.ones_like(x)
    log_scale = np.zeros_like(x)
    for k in range(q):
        p_prev, p = p, (x * p - np.sqrt(k) * p_prev) / np.sqrt(k + 1)
        scale = np.where(np.abs(p) > RESCALE_AT, np.abs(p), 1.0)
        p, p_prev = p / scale, p_prev / scale
        log_scale += np.log(scale)
    return p, p_prev, log_scale


def gauss_hermite_normal(q: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with weights summing to one.

    Golub-Welsch nodes (eigenvalues of the Jacobi matrix with off-diagonal
    sqrt(k)), polished by one Newton step. Weights come from the Christoffel
    form w = 1 / (q * p_{q-1}(x)^2) in log space, so tail weights that are
    far below the float range of the eigenvectors stay positive.
    """
    if q < 1:
        raise DomainError(f"node count must be >= 1, got {q}")
    if q > MAX_NODES:
        raise ResourceError(f"node count {q} exceeds the limit of {MAX_NODES}")
    if q == 1:
        return QuadratureRule(nodes=np.zeros(1), log_weights=np.zeros(1))

    off_diagonal = np.sqrt(np.arange(1, q, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(q), off_diagonal, eigvals_only=True)
    p_q, p_last, _ = _orthonormal_hermite(nodes, q)
    nodes = nodes - p_q / (np.sqrt(q) * p_last)
    _, p_last, log_scale = _orthonormal_hermite(nodes, q)
    log_weights = -np.log(q) - 2.0 * (np.log(np.abs(p_last)) + log_scale)

    # exact symmetry about zero, then exact unit mass
    nodes = 0.5 * (nodes - nodes[::-1])
    log_weights = 0.5 * (log_weights + log_weights[::-1])
    log_weights = log_weights - logsumexp(log_weights)
    logger.debug("Gauss-Hermite rule built: q=%d, outermost node %.6f", q, nodes[-1])
    return QuadratureRule(nodes=nodes, log_weights=log_weights)


def marginal_loglik_ghq_rows(items: ItemSet, responses: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """Per-row GHQ marginal log-likelihoods, shape (N,)."""
    loglik = pattern_loglik_grid(items, responses, rule.nodes)
    return logsumexp(loglik + rule.log_weights[None, :], axis=1)


def marginal_loglik_ghq(
    items: Sequence[ItemParameters] | ItemSet, responses: Sequence[int], rule: QuadratureRule
) -> float:
    """log sum_q w_q exp(pattern_loglik(items, responses, x_q))."""
    itemset = as_itemset(items)
    row = np.asarray(responses).reshape(1, -1)
    if row.shape[1] != itemset.n_items:
        raise DimensionError(
            f"response length {row.shape[1]} does not match item count {itemset.n_items}"
        )
    return float(marginal_loglik_ghq_rows(itemset, row, rule)[0])


def dataset_loglik_ghq(
    items: Sequence[ItemParameters] | ItemSet, data: ResponseMatrix, rule: QuadratureRule
) -> float:
    itemset = as_itemset(items)
    if data.n_items != itemset.n_items:
        raise DimensionError(
            f"data has {data.n_items} items but {itemset.n_items} item parameters were given"
        )
    return float(marginal_loglik_ghq_rows(itemset, data.responses, rule).sum())
