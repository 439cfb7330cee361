import math
from enum import Enum
from pathlib import Path
from typing import Any, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from grmfit.core import config as app_config
from grmfit.core.config import Settings

N_THRESHOLDS = 4
N_CATEGORIES = N_THRESHOLDS + 1


class Method(str, Enum):
    LAPLACE = "Laplace"
    GHQ_EM = "GhqEm"

    @property
    def slug(self) -> str:
        """File-name form used in the study tree (fit_laplace.json, fit_ghq_em.json)."""
        return {"Laplace": "laplace", "GhqEm": "ghq_em"}[self.value]

    @classmethod
    def from_cli(cls, name: str) -> "Method":
        lookup = {"laplace": cls.LAPLACE, "ghq-em": cls.GHQ_EM, "ghq_em": cls.GHQ_EM}
        try:
            return lookup[name.lower()]
        except KeyError:
            return cls(name)


class FitStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILURE = "LineSearchFailure"
    BOUNDARY_STUCK = "BoundaryStuck"
    NUMERICAL_FAILURE = "NumericalFailure"


class Parameter(str, Enum):
    A = "a"
    B1 = "b1"
    B2 = "b2"
    B3 = "b3"
    B4 = "b4"


PARAMETERS: Tuple[Parameter, ...] = tuple(Parameter)


def _all_finite(values: Tuple[float, ...]) -> bool:
    return all(math.isfinite(v) for v in values)


class ItemParameters(BaseModel):
    """One graded-response item in the traditional (a, b) parameterization."""

    model_config = ConfigDict(frozen=True)

    item_id: int = Field(..., ge=0)
    a: float = Field(..., gt=0, description="Discrimination, logit units per latent unit.")
    b: Tuple[float, float, float, float] = Field(
        ..., description="Thresholds b1 < b2 < b3 < b4 on the latent scale."
    )

    @field_validator("a")
    @classmethod
    def _finite_a(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("a must be finite")
        return v

    @field_validator("b")
    @classmethod
    def _ordered(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not _all_finite(v):
            raise ValueError("thresholds must be finite")
        if any(lo >= hi for lo, hi in zip(v[:-1], v[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {v}")
        return v

    def value(self, parameter: Parameter) -> float:
        if parameter is Parameter.A:
            return self.a
        return self.b[int(parameter.value[1]) - 1]

    def to_row(self) -> dict[str, Any]:
        return {
            "item": self.item_id,
            "a": self.a,
            "b1": self.b[0],
            "b2": self.b[1],
            "b3": self.b[2],
            "b4": self.b[3],
        }

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> "ItemParameters":
        return cls(
            item_id=int(row["item"]),
            a=float(row["a"]),
            b=(float(row["b1"]), float(row["b2"]), float(row["b3"]), float(row["b4"])),
        )


class SlopeInterceptParameters(BaseModel):
    """Slope-intercept coordinates, d_s = -a * b_s."""

    model_config = ConfigDict(frozen=True)

    item_id: int
    a: float = Field(..., gt=0)
    d: Tuple[float, float, float, float]

    @field_validator("d")
    @classmethod
    def _decreasing(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not _all_finite(v):
            raise ValueError("intercepts must be finite")
        if any(hi <= lo for hi, lo in zip(v[:-1], v[1:])):
            raise ValueError(f"intercepts must be strictly decreasing, got {v}")
        return v


class ParameterBounds(BaseModel):
    """Box constraints on the natural (a, b) scale."""

    a_lower: float = Field(1e-4, gt=0)
    a_upper: float = 50.0
    b_lower: float = -10.0
    b_upper: float = 10.0

    @model_validator(mode="after")
    def _ordered(self) -> "ParameterBounds":
        if not self.a_lower < self.a_upper:
            raise ValueError("a_lower must be below a_upper")
        if not self.b_lower < self.b_upper:
            raise ValueError("b_lower must be below b_upper")
        return self

    @classmethod
    def symmetric(cls, threshold_bound: float, a_upper: float = 50.0) -> "ParameterBounds":
        return cls(a_upper=a_upper, b_lower=-threshold_bound, b_upper=threshold_bound)

    def contains(self, item: ItemParameters) -> bool:
        return self.a_lower <= item.a <= self.a_upper and all(
            self.b_lower <= b <= self.b_upper for b in item.b
        )


# Guard box for unbounded EM runs; keeps iterates finite, not a modelling constraint.
EM_GUARD_BOUNDS = ParameterBounds(a_lower=1e-4, a_upper=1e3, b_lower=-1e3, b_upper=1e3)


class FitConfig(BaseModel):
    max_outer_iterations: int = Field(500, ge=1)
    outer_tolerance: float = Field(1e-7, gt=0)
    inner_tolerance: float = Field(1e-9, gt=0)
    em_tolerance: float = Field(1e-4, gt=0)
    bounds: ParameterBounds = Field(default_factory=ParameterBounds)
    quadrature_points: int = Field(61, ge=1)
    em_bounded: bool = Field(
        False, description="Project EM iterates onto `bounds` instead of the guard box."
    )

    @classmethod
    def from_settings(cls, cfg: Settings, **overrides: Any) -> "FitConfig":
        """Settings-derived config; keyword overrides that are not None win."""
        values: dict[str, Any] = {
            "max_outer_iterations": cfg.max_outer_iterations,
            "outer_tolerance": cfg.outer_tolerance,
            "inner_tolerance": cfg.inner_tolerance,
            "em_tolerance": cfg.em_tolerance,
            "quadrature_points": cfg.quadrature_points,
            "bounds": ParameterBounds.symmetric(cfg.threshold_bound, cfg.slope_upper_bound),
            "em_bounded": cfg.em_bounded,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class FitResult(BaseModel):
    estimates: List[ItemParameters]
    loglik: float
    converged: bool
    status: FitStatus
    outer_iterations: int = Field(..., ge=0)
    wall_time_ms: int = Field(..., ge=0)
    method: Method
    loglik_trace: List[float] = Field(default_factory=list, exclude=True)

    @model_validator(mode="after")
    def _status_matches(self) -> "FitResult":
        if self.converged != (self.status is FitStatus.CONVERGED):
            raise ValueError("converged must be true exactly when status is Converged")
        return self

    @property
    def ofv(self) -> float:
        """Objective function value, -2 * loglik."""
        return -2.0 * self.loglik

    def to_payload(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "converged": self.converged,
            "status": self.status.value,
            "loglik": self.loglik,
            "ofv": self.ofv,
            "outer_iterations": self.outer_iterations,
            "wall_time_ms": self.wall_time_ms,
            "items": [item.to_row() for item in self.estimates],
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "FitResult":
        return cls(
            estimates=[ItemParameters.from_row(row) for row in payload["items"]],
            loglik=float(payload["loglik"]),
            converged=bool(payload["converged"]),
            status=FitStatus(payload["status"]),
            outer_iterations=int(payload["outer_iterations"]),
            wall_time_ms=int(payload["wall_time_ms"]),
            method=Method(payload["method"]),
        )


class SimulationSpec(BaseModel):
    n_items: int = Field(..., ge=1)
    n_subjects: int = Field(..., ge=1)
    seed: int = Field(..., ge=0, lt=2**64)
    max_resimulations: int = Field(1000, ge=0)


class SimulationMeta(BaseModel):
    seed: int
    resimulations: int
    n_subjects: int
    n_items: int


class ErrorRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario_id: int
    replicate: int
    item_id: int
    parameter: Parameter
    error: float

    @field_validator("error")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("error must be finite")
        return v


class RecoverySummary(BaseModel):
    parameter: Parameter
    bias: float
    rmse: float
    rrmse: float
    n: int


class ErrorDistribution(BaseModel):
    parameter: Parameter
    mean: float
    sd: float
    median: float
    min: float
    max: float
    n: int


class AgreementSummary(BaseModel):
    parameter: Parameter
    correlation: float
    median_abs_diff: float
    n: int


class LoglikComparison(BaseModel):
    differences: List[float] = Field(..., description="loglik_laplace - loglik_ghq per pair.")
    relative_differences: List[float]
    threshold: float
    fraction_laplace_lower: float
    fraction_ghq_lower: float
    fraction_relative_above_5pct: float


class RuntimeSummary(BaseModel):
    method: Method
    mean_ms: float
    median_ms: float
    n: int


def _study_fit_config() -> FitConfig:
    """Study EM runs inside the Laplace box unless the config says otherwise."""
    return FitConfig.from_settings(app_config.settings, em_bounded=True)


class StudyConfig(BaseModel):
    sample_sizes: List[int] = Field(default_factory=lambda: [50, 100, 250, 500])
    item_counts: List[int] = Field(default_factory=lambda: [5, 20])
    replicates: int = Field(1000, ge=1)
    base_seed: int = Field(20190601, ge=0, lt=2**64)
    methods: List[Method] = Field(default_factory=lambda: [Method.LAPLACE, Method.GHQ_EM])
    quadrature_points: int = Field(61, ge=1)
    jobs: int = Field(1, ge=1)
    output_dir: Path = Path("study")
    include_nonconverged: bool = False
    psi_min: float = -4.0
    psi_max: float = 4.0
    psi_step: float = Field(0.1, gt=0)
    max_resimulations: int = Field(1000, ge=0)
    fit: FitConfig = Field(default_factory=_study_fit_config)

    @field_validator("sample_sizes", "item_counts")
    @classmethod
    def _positive_grid(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("grid must not be empty")
        if any(n < 1 for n in v):
            raise ValueError("grid values must be >= 1")
        return v

    @field_validator("methods")
    @classmethod
    def _methods(cls, v: List[Method]) -> List[Method]:
        if not v:
            raise ValueError("at least one method is required")
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def _psi_range(self) -> "StudyConfig":
        if not self.psi_min < self.psi_max:
            raise ValueError("psi_min must be below psi_max")
        return self


class Manifest(BaseModel):
    config: dict
    settings: Optional[dict] = None
    scenarios: List[dict] = Field(default_factory=list)
    fits: List[dict] = Field(default_factory=list)
    total_fit_wall_time_ms: int = 0
    study_wall_time_ms: int = 0
