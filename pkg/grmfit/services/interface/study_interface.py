from pathlib import Path
from typing import Protocol

from grmfit.models.schemas import Manifest, StudyConfig


class StudyInterface(Protocol):
    def run(self, config: StudyConfig) -> Manifest:
        """Run every (scenario, replicate, method) fit and aggregate the results."""

    def aggregate(self, input_dir: Path, output_dir: Path) -> list[Path]:
        """Rebuild the aggregate tables from persisted fit results."""
