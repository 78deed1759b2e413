import logging
import sys
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

from pcodeguard.core.config import settings

LOG_FILE_NAME = "pcodeguard.log"


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None):
    """Configures the root logger for the entire application."""

    # Console level: explicit argument, then settings (LOG_LEVEL), default INFO
    console_level_str = (level or settings.LOG_LEVEL or "INFO").upper()
    console_level = getattr(logging, console_level_str, logging.INFO)

    log_format = logging.Formatter(
        fmt="%(asctime)s | %(levelname)-8s | %(name)-20s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # 1. Console Handler - stderr keeps stdout free for the findings summary
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(console_level)
    console_handler.setFormatter(log_format)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)

    # Avoid duplicate logs if function called twice
    if root_logger.handlers:
        return root_logger

    root_logger.addHandler(console_handler)

    # 2. File Handler (Rotating) - DEBUG level, 5MB x 3 backups
    directory = log_dir or settings.LOG_DIR
    if directory:
        os.makedirs(directory, exist_ok=True)
        file_handler = RotatingFileHandler(
            os.path.join(directory, LOG_FILE_NAME),
            maxBytes=5 * 1024 * 1024,
            backupCount=3,
            encoding="utf-8",
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(log_format)
        root_logger.addHandler(file_handler)

    # Silence noisy libraries
    logging.getLogger("z3").setLevel(logging.WARNING)

    return root_logger
