"""Ordered coordinates shared by both estimators.

Each item is optimized as c = (log a, b1, log(b2 - b1), log(b3 - b2), log(b4 - b3)),
so every iterate has a > 0 and strictly increasing thresholds. Box bounds live on
the natural (a, b) scale and are enforced by projection.
"""

import numpy as np

from grmfit.models.schemas import ParameterBounds
from grmfit.services.types import ItemSet

MIN_GAP = 1e-6


def pack(items: ItemSet) -> np.ndarray:
    """ItemSet -> (M, 5) ordered coordinates."""
    c = np.empty((items.n_items, 5))
    c[:, 0] = np.log(items.a)
    c[:, 1] = items.b[:, 0]
    c[:, 2:] = np.log(np.diff(items.b, axis=1))
    return c


def unpack(c: np.ndarray, item_ids: np.ndarray) -> ItemSet:
    c = np.asarray(c, dtype=float).reshape(-1, 5)
    b = np.empty((c.shape[0], 4))
    b[:, 0] = c[:, 1]
    b[:, 1:] = c[:, [1]] + np.cumsum(np.exp(c[:, 2:]), axis=1)
    return ItemSet(a=np.exp(c[:, 0]), b=b, item_ids=item_ids)


def project_natural(a: np.ndarray, b: np.ndarray, bounds: ParameterBounds) -> tuple[np.ndarray, np.ndarray]:
    """Clip (a, b) into the box while keeping thresholds at least MIN_GAP apart."""
    a = np.clip(a, bounds.a_lower, bounds.a_upper)
    b = b.copy()
    for k in range(4):
        lo = bounds.b_lower + k * MIN_GAP
        hi = bounds.b_upper - (3 - k) * MIN_GAP
        b[:, k] = np.clip(b[:, k], lo, hi)
        if k:
            b[:, k] = np.maximum(b[:, k], b[:, k - 1] + MIN_GAP)
    return a, b


def project(c: np.ndarray, bounds: ParameterBounds) -> np.ndarray:
    """Projection of ordered coordinates onto the natural-scale box.

    Points already inside the box are returned unchanged (bit for bit).
    """
    c = np.asarray(c, dtype=float).reshape(-1, 5)
    items = unpack(c, np.arange(c.shape[0]))
    inside = (
        (items.a >= bounds.a_lower)
        & (items.a <= bounds.a_upper)
        & np.all(items.b >= bounds.b_lower, axis=1)
        & np.all(items.b <= bounds.b_upper, axis=1)
    )
    if np.all(inside):
        return c.copy()
    a, b = project_natural(items.a, items.b, bounds)
    projected = pack(ItemSet(a=a, b=b, item_ids=items.item_ids))
    out = c.copy()
    out[~inside] = projected[~inside]
    return out


def natural_jacobian(c_row: np.ndarray) -> np.ndarray:
    """d(a, b1, b2, b3, b4) / d(c) for one item, shape (5, 5)."""
    jac = np.zeros((5, 5))
    jac[0, 0] = np.exp(c_row[0])
    jac[1:, 1] = 1.0
    gaps = np.exp(c_row[2:])
    for k in range(1, 4):  # b_{k+1} depends on gaps 1..k
        jac[k + 1, 2 : k + 2] = gaps[:k]
    return jac


def natural_curvature(c_row: np.ndarray, grad_natural: np.ndarray) -> np.ndarray:
    """Second-order chain term sum_i dQ/dphi_i * d2 phi_i / dc2 (diagonal here)."""
    diag = np.zeros(5)
    diag[0] = grad_natural[0] * np.exp(c_row[0])
    gaps = np.exp(c_row[2:])
    for l in range(3):  # gap l feeds thresholds b_{l+2}..b_4
        diag[l + 2] = gaps[l] * grad_natural[l + 2 :].sum()
    return np.diag(diag)
