from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from grmfit.core.errors import DimensionError, DomainError
from grmfit.models.schemas import N_CATEGORIES, N_THRESHOLDS, ItemParameters


@dataclass(frozen=True)
class ItemSet:
    """Column-oriented view of M items: a (M,), b (M, 4), item_ids (M,)."""

    a: np.ndarray
    b: np.ndarray
    item_ids: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1, N_THRESHOLDS)
        ids = np.asarray(self.item_ids, dtype=int).reshape(-1)
        if not (a.shape[0] == b.shape[0] == ids.shape[0]):
            raise DimensionError(
                f"item arrays disagree: a={a.shape[0]}, b={b.shape[0]}, ids={ids.shape[0]}"
            )
        if np.any(a <= 0):
            raise DomainError("discriminations must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "item_ids", ids)

    @property
    def n_items(self) -> int:
        return int(self.a.shape[0])

    @classmethod
    def from_parameters(cls, items: Sequence[ItemParameters]) -> "ItemSet":
        if not items:
            return cls.empty()
        return cls(
            a=np.array([it.a for it in items], dtype=float),
            b=np.array([it.b for it in items], dtype=float),
            item_ids=np.array([it.item_id for it in items], dtype=int),
        )

    @classmethod
    def empty(cls) -> "ItemSet":
        return cls(a=np.zeros(0), b=np.zeros((0, N_THRESHOLDS)), item_ids=np.zeros(0, dtype=int))

    def to_parameters(self) -> List[ItemParameters]:
        return [
            ItemParameters(item_id=int(i), a=float(a), b=tuple(float(x) for x in b))
            for i, a, b in zip(self.item_ids, self.a, self.b)
        ]


@dataclass(frozen=True)
class ResponseMatrix:
    """N subjects by M items of category indices in {0..4}, no missing values."""

    responses: np.ndarray
    item_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.responses)
        if y.ndim != 2:
            raise DimensionError(f"responses must be a 2-D grid, got shape {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.isfinite(y)) or not np.all(y == np.round(y)):
                raise DomainError("responses must be integer category indices")
        y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= N_CATEGORIES):
            raise DomainError(f"responses must lie in 0..{N_CATEGORIES - 1}")
        ids = (
            np.arange(y.shape[1], dtype=int)
            if self.item_ids is None
            else np.asarray(self.item_ids, dtype=int).reshape(-1)
        )
        if ids.shape[0] != y.shape[1]:
            raise DimensionError("item_ids length must equal the number of columns")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "item_ids", ids)

    @property
    def n_subjects(self) -> int:
        return int(self.responses.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.responses.shape[1])

    def missing_categories(self) -> dict[int, List[int]]:
        """Item id -> categories absent from that column."""
        out: dict[int, List[int]] = {}
        for j, item_id in enumerate(self.item_ids):
            seen = np.bincount(self.responses[:, j], minlength=N_CATEGORIES)
            absent = [int(s) for s in np.flatnonzero(seen == 0)]
            if absent:
                out[int(item_id)] = absent
        return out


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations under the standard normal density.

    ``log_weights`` is the primary store; ``weights`` is its exponential and
    may underflow to zero in the far tails of very large rules.
    """

    nodes: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.nodes, dtype=float).reshape(-1)
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if x.shape != lw.shape or x.size == 0:
            raise DimensionError("nodes and weights must be non-empty and equally long")
        if not np.all(np.isfinite(lw)):
            raise DomainError("quadrature weights must be positive")
        if np.any(np.diff(x) <= 0):
            raise DomainError("quadrature nodes must be strictly ascending")
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "log_weights", lw)

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True)
class ModeResult:
    eta_hat: float
    curvature: float
    iterations: int


@dataclass(frozen=True)
class ExpectedCounts:
    """Expected complete-data counts on the quadrature grid.

    node_mass: (Q,) totals n_q; category_mass: (M, 5, Q) counts r_jsq;
    loglik: the dataset GHQ log-likelihood at the items used in the E-step.
    """

    node_mass: np.ndarray
    category_mass: np.ndarray
    loglik: float

    @property
    def n_items(self) -> int:
        return int(self.category_mass.shape[0])


@dataclass(frozen=True)
class SimulatedData:
    data: ResponseMatrix
    psi: np.ndarray
    resimulations: int
    seed: int
    stream: tuple = field(default_factory=tuple)
