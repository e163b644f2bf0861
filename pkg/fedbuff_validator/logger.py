"""
Logging configuration for fedbuff-validator.
"""

import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import colorama

colorama.init()

LOG_FILENAME = "fedbuff_validator.log"
ABORTS_DIRNAME = "aborts"

_ANSI_ESCAPE = re.compile(r"\x1b\[[0-9;]*m")


class ColoredFormatter(logging.Formatter):
    """Console formatter that colors each record by level."""

    LEVEL_COLORS = {
        "DEBUG": colorama.Fore.BLUE,
        "INFO": colorama.Fore.GREEN,
        "WARNING": colorama.Fore.YELLOW,
        "ERROR": colorama.Fore.RED,
        "CRITICAL": colorama.Fore.RED + colorama.Style.BRIGHT,
    }

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        if os.environ.get("NO_COLOR") or os.environ.get("TERM") == "dumb":
            return message

        color = self.LEVEL_COLORS.get(record.levelname)
        return f"{color}{message}{colorama.Style.RESET_ALL}" if color else message


class FileFormatter(logging.Formatter):
    """Plain formatter for the run log file."""

    def format(self, record: logging.LogRecord) -> str:
        return _ANSI_ESCAPE.sub("", super().format(record))


def setup_logger(
    name: str = "fedbuff_validator",
    level: int = logging.INFO,
    log_dir: Optional[str] = None,
) -> logging.Logger:
    """Set up a logger with console and file handlers.

    Args:
        name: Logger name
        level: Logging level for the console handler
        log_dir: Directory for the log file; no file handler when omitted

    Returns:
        Configured logger
    """
    logger = logging.getLogger(name)
    logger.setLevel(min(level, logging.DEBUG) if log_dir else level)

    for handler in logger.handlers[:]:
        handler.close()
        logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(ColoredFormatter("%(message)s"))
    console_handler.setLevel(level)
    logger.addHandler(console_handler)

    if log_dir:
        log_dir_path = Path(log_dir)
        log_dir_path.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_dir_path / LOG_FILENAME, encoding="utf-8")
        file_handler.setFormatter(FileFormatter("%(asctime)s %(levelname)s | %(name)s | %(message)s"))
        file_handler.setLevel(logging.DEBUG)
        logger.addHandler(file_handler)

    return logger


def log_abort_diagnostic(cell_name: str, error: Dict[str, Any], log_dir: str) -> Path:
    """Save the diagnostic of an aborted run to a file.

    Args:
        cell_name: Name of the experiment cell that aborted
        error: Dictionary form of the abort exception
        log_dir: Directory for logs

    Returns:
        Path to the diagnostic file
    """
    file_path = Path(log_dir) / ABORTS_DIRNAME / f"{cell_name}.json"
    file_path.parent.mkdir(parents=True, exist_ok=True)

    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(error, f, indent=2, sort_keys=True)

    return file_path
