"""
Enhanced Logging System - Console and structured file logging for pipeline runs

Records emitted inside `run_context(...)` carry the run's config hash, seed and
current stage, so a JSON log file can be joined against manifest.json.
"""

import json
import logging
import os
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Iterator, Optional

from logging_utils import configure_log_levels

LOG_ENV_VAR = "PROPENSITY_LOG"
RUN_FIELDS = ("config_hash", "seed", "stage")

_run_context: Dict[str, Any] = {}


@contextmanager
def run_context(**fields: Any) -> Iterator[Dict[str, Any]]:
    """Stamp run fields onto every record logged inside the block; nests, None is skipped"""
    unknown = set(fields) - set(RUN_FIELDS)
    if unknown:
        raise ValueError(f"Unknown run context fields: {sorted(unknown)}")
    previous = dict(_run_context)
    _run_context.update({k: v for k, v in fields.items() if v is not None})
    try:
        yield dict(_run_context)
    finally:
        _run_context.clear()
        _run_context.update(previous)


class RunContextFilter(logging.Filter):
    """Copies the active run context onto each record as `run`"""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = dict(_run_context)
        return True


class StructuredFormatter(logging.Formatter):
    """One JSON object per record, with run context and structured extras"""

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        run = getattr(record, "run", None)
        if run:
            entry["run"] = run
        extra = getattr(record, "extra_data", None)
        if extra is not None:
            entry["data"] = extra
        if record.levelno >= logging.WARNING:
            entry["at"] = f"{record.module}:{record.lineno}"
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


class ColoredFormatter(logging.Formatter):
    """Colored console formatter"""

    COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m"
    }
    RESET = "\033[0m"

    def __init__(self, fmt: str, datefmt: Optional[str] = None, use_color: bool = True):
        super().__init__(fmt, datefmt=datefmt)
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        if not self.use_color:
            return super().format(record)
        original = record.levelname
        color = self.COLORS.get(original, "")
        record.levelname = f"{color}{original}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = original


def resolve_level(level: Optional[str] = None) -> str:
    """Explicit level, else PROPENSITY_LOG, else INFO"""
    chosen = level or os.environ.get(LOG_ENV_VAR) or "INFO"
    chosen = chosen.upper()
    if chosen not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        chosen = "INFO"
    return chosen


def setup_logging(
    level: Optional[str] = None,
    log_file: Optional[str] = None,
    structured: bool = False,
    max_bytes: int = 10 * 1024 * 1024,
    backup_count: int = 5
):
    """
    Setup logging for a pipeline run

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR); falls back to PROPENSITY_LOG
        log_file: Path to a JSON log file (optional, rotated)
        structured: Use JSON structured logging on the console too
        max_bytes: Max log file size before rotation
        backup_count: Number of backup files to keep
    """
    resolved = resolve_level(level)
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, resolved))

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, resolved))
    console_handler.addFilter(RunContextFilter())

    if structured:
        console_handler.setFormatter(StructuredFormatter())
    else:
        console_handler.setFormatter(ColoredFormatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%H:%M:%S",
            use_color=sys.stderr.isatty()
        ))
    root_logger.addHandler(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=max_bytes,
            backupCount=backup_count
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.addFilter(RunContextFilter())
        file_handler.setFormatter(StructuredFormatter())
        root_logger.addHandler(file_handler)

    configure_log_levels()
