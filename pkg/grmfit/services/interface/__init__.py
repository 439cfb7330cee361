"""Service interfaces."""

from grmfit.services.interface.estimator_interface import EstimatorInterface
from grmfit.services.interface.study_interface import StudyInterface

__all__ = ["EstimatorInterface", "StudyInterface"]
