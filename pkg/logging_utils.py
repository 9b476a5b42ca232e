"""
Logging Utilities - Count-limited logging to keep row diagnostics from flooding
"""

import logging
from collections import defaultdict
from typing import Dict


class ThrottledLogger:
    """
    A logger wrapper that caps repeated messages per key.
    Useful for per-row diagnostics on dirty input files.

    The first `max_per_key` messages for a key are emitted; the rest are
    counted and reported once by flush().
    """

    def __init__(self, base_logger: logging.Logger, max_per_key: int = 10):
        self._logger = base_logger
        self._max_per_key = max_per_key
        self._emitted: Dict[str, int] = defaultdict(int)
        self._suppressed: Dict[str, int] = defaultdict(int)

    def _should_log(self, key: str) -> bool:
        if self._emitted[key] < self._max_per_key:
            self._emitted[key] += 1
            return True
        self._suppressed[key] += 1
        return False

    def debug(self, msg: str, key: str = "", *args, **kwargs):
        if self._should_log(key or msg[:50]):
            self._logger.debug(msg, *args, **kwargs)

    def info(self, msg: str, key: str = "", *args, **kwargs):
        if self._should_log(key or msg[:50]):
            self._logger.info(msg, *args, **kwargs)

    def warning(self, msg: str, key: str = "", *args, **kwargs):
        if self._should_log(key or msg[:50]):
            self._logger.warning(msg, *args, **kwargs)

    def error(self, msg: str, *args, **kwargs):
        self._logger.error(msg, *args, **kwargs)

    def suppressed(self, key: str) -> int:
        return self._suppressed.get(key, 0)

    def flush(self):
        """Report suppressed counts and reset"""
        for key, count in sorted(self._suppressed.items()):
            if count > 0:
                self._logger.warning(f"{key}: {count} further messages suppressed")
        self._emitted.clear()
        self._suppressed.clear()


def create_throttled_logger(name: str, max_per_key: int = 10) -> ThrottledLogger:
    """Create a throttled logger for a module"""
    return ThrottledLogger(logging.getLogger(name), max_per_key)


def configure_log_levels():
    """Quiet third-party loggers"""
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("shapely").setLevel(logging.WARNING)
    logging.getLogger("numexpr").setLevel(logging.WARNING)
    logging.getLogger("urllib3").setLevel(logging.WARNING)
