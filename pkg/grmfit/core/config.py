import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv


def _load_env() -> None:
    """Load environment variables from a .env at repo root if present."""
    repo_root = Path(__file__).resolve().parents[2]
    env_path = repo_root / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        load_dotenv()  # fallback to default search


_load_env()


def _env_bool(name: str, default: str = "false") -> bool:
    return os.environ.get(name, default).lower() == "true"


class Settings:
    """Runtime configuration for estimation runs and studies."""

    def __init__(self) -> None:
        self.env: str = os.environ.get("APP_ENV", "local")
        self.data_dir: Path = Path(
            os.environ.get("DATA_DIR", Path.cwd() / "storage")
        ).resolve()
        self.study_dir: Path = self.data_dir / "study"
        self.log_dir: Path = self.data_dir / "logs"
        self.log_level: str = os.environ.get("LOG_LEVEL", "INFO").upper()
        self.log_to_file: bool = _env_bool("LOG_TO_FILE")
        self.log_file: Path = Path(
            os.environ.get("LOG_FILE", self.log_dir / "grmfit.log")
        ).resolve()
        self.quadrature_points: int = int(os.environ.get("QUADRATURE_POINTS", "61"))
        self.jobs: int = int(os.environ.get("JOBS", "1"))
        self.max_outer_iterations: int = int(
            os.environ.get("MAX_OUTER_ITERATIONS", "500")
        )
        self.outer_tolerance: float = float(os.environ.get("OUTER_TOLERANCE", "1e-7"))
        self.inner_tolerance: float = float(os.environ.get("INNER_TOLERANCE", "1e-9"))
        self.em_tolerance: float = float(os.environ.get("EM_TOLERANCE", "1e-4"))
        self.em_bounded: bool = _env_bool("EM_BOUNDED")
        self.threshold_bound: float = float(os.environ.get("THRESHOLD_BOUND", "10"))
        self.slope_upper_bound: float = float(
            os.environ.get("SLOPE_UPPER_BOUND", "50")
        )
        self.show_progress: bool = _env_bool("SHOW_PROGRESS")

    def ensure_dirs(self) -> None:
        """Create required directories if they do not exist."""
        self.data_dir.mkdir(parents=True, exist_ok=True)
        if self.log_to_file:
            self.log_dir.mkdir(parents=True, exist_ok=True)

    def model_dump(self) -> dict[str, Any]:
        return {
            "env": self.env,
            "data_dir": str(self.data_dir),
            "study_dir": str(self.study_dir),
            "log_dir": str(self.log_dir),
            "log_level": self.log_level,
            "log_to_file": self.log_to_file,
            "log_file": str(self.log_file),
            "quadrature_points": self.quadrature_points,
            "jobs": self.jobs,
            "max_outer_iterations": self.max_outer_iterations,
            "outer_tolerance": self.outer_tolerance,
            "inner_tolerance": self.inner_tolerance,
            "em_tolerance": self.em_tolerance,
            "em_bounded": self.em_bounded,
            "threshold_bound": self.threshold_bound,
            "slope_upper_bound": self.slope_upper_bound,
            "show_progress": self.show_progress,
        }


settings = Settings()
