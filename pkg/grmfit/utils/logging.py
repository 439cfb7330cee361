import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from grmfit.core.config import Settings, settings


def configure_logging(cfg: Optional[Settings] = None, level: Optional[str] = None) -> None:
    """Console logging at LOG_LEVEL (or `level`), plus a rotating LOG_FILE when LOG_TO_FILE is true."""
    cfg = cfg or settings
    level = (level or cfg.log_level).upper()
    handlers: list[logging.Handler] = []

    console = logging.StreamHandler()
    console.setLevel(level)
    handlers.append(console)

    if cfg.log_to_file:
        log_path: Path = cfg.log_file
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(log_path, maxBytes=5 * 1024 * 1024, backupCount=3)
        file_handler.setLevel(level)
        handlers.append(file_handler)

    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s - %(message)s",
        handlers=handlers,
        force=True,
    )
