import logging
import sys
from typing import Optional

from src.config.settings import get_settings


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure application logging
    """
    settings = get_settings()
    level_name = (level or settings.LOG_LEVEL).upper()

    # Configure root logger; stdout is reserved for command output
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=settings.LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stderr)
        ],
        force=True,
    )

    logging.debug(f"Logging configured with level {level_name}")


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger with the given name
    """
    return logging.getLogger(name)
