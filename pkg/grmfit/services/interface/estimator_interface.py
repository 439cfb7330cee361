from typing import Protocol, Sequence

from grmfit.models.schemas import FitConfig, FitResult, ItemParameters, Method
from grmfit.services.types import ResponseMatrix


class EstimatorInterface(Protocol):
    """Marginal maximum-likelihood estimator of graded-response item parameters."""

    method: Method
    config: FitConfig

    def fit(self, data: ResponseMatrix, init: Sequence[ItemParameters]) -> FitResult:
        """Fit item parameters to `data` starting from `init`."""
