from functools import lru_cache
from typing import Optional

from grmfit.core.config import Settings, settings
from grmfit.models.schemas import FitConfig, Method
from grmfit.services.em_service import GhqEmEstimator
from grmfit.services.interface.estimator_interface import EstimatorInterface
from grmfit.services.laplace_service import LaplaceEstimator
from grmfit.services.quadrature import gauss_hermite_normal
from grmfit.services.types import QuadratureRule


@lru_cache
def get_settings() -> Settings:
    settings.ensure_dirs()
    return settings


@lru_cache
def get_quadrature_rule(q: int) -> QuadratureRule:
    """Rules are immutable, so one instance per node count is shared."""
    return gauss_hermite_normal(q)


def get_fit_config(cfg: Optional[Settings] = None, **overrides) -> FitConfig:
    """FitConfig from settings; keyword overrides win (e.g. quadrature_points)."""
    return FitConfig.from_settings(cfg or get_settings(), **overrides)


def get_estimator(method: Method, config: Optional[FitConfig] = None) -> EstimatorInterface:
    config = config or get_fit_config()
    if method is Method.LAPLACE:
        return LaplaceEstimator(config)
    return GhqEmEstimator(config, get_quadrature_rule(config.quadrature_points))
