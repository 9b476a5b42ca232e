"""
Performance Monitor - Per-stage wall time and peak memory for the run manifest
"""

import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, List, Optional

try:
    import resource
except ImportError:  # Windows
    resource = None

logger = logging.getLogger(__name__)


@dataclass
class StageMetrics:
    """Timing snapshot for one pipeline stage"""
    stage: str
    started_at: float
    wall_seconds: float
    peak_memory_mb: float
    ok: bool


class PerformanceMonitor:
    """
    Stage timer

    Wrap each stage in `with monitor.stage("train"):`; failed stages are
    recorded with ok=False before the exception propagates.
    """

    def __init__(self):
        self._stages: List[StageMetrics] = []
        self._run_start = time.time()

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        started = time.time()
        clock = time.perf_counter()
        ok = False
        logger.info(f"Stage '{name}' started")
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - clock
            self._stages.append(StageMetrics(
                stage=name,
                started_at=started,
                wall_seconds=round(elapsed, 3),
                peak_memory_mb=round(self._get_memory_usage(), 1),
                ok=ok,
            ))
            if ok:
                logger.info(f"Stage '{name}' finished in {elapsed:.2f}s")
            else:
                logger.error(f"Stage '{name}' failed after {elapsed:.2f}s")

    @property
    def stages(self) -> List[StageMetrics]:
        return list(self._stages)

    def get(self, name: str) -> Optional[StageMetrics]:
        for metrics in self._stages:
            if metrics.stage == name:
                return metrics
        return None

    def total_seconds(self) -> float:
        return round(time.time() - self._run_start, 3)

    def _get_memory_usage(self) -> float:
        """Peak resident set size in MB"""
        if resource is None:
            return 0.0
        try:
            peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        except (AttributeError, ValueError):
            return 0.0
        # ru_maxrss is bytes on macOS, kilobytes elsewhere
        return peak / (1024 * 1024) if sys.platform == "darwin" else peak / 1024

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total_seconds": self.total_seconds(),
            "stages": [asdict(s) for s in self._stages],
        }
