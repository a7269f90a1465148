"""
QRobust Utilities Module
Common helpers: timing, seeded random streams and small numeric utilities.
"""

import logging
import time
import zlib
from typing import Optional

import numpy as np

from qr_logging import get_logger

class PerformanceTimer:
    """Context manager for timing operations; durations go to the PERF level."""

    def __init__(self, operation_name: str, logger: Optional[logging.Logger] = None, **metrics):
        self.operation_name = operation_name
        self.logger = logger or get_logger(__name__)
        self.metrics = metrics
        self.start_time: Optional[float] = None
        self.end_time: Optional[float] = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.logger.debug(f"Starting {self.operation_name}")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.end_time = time.perf_counter()
        duration_ms = (self.end_time - self.start_time) * 1000.0
        if exc_type is None:
            perf = getattr(self.logger, "perf", self.logger.debug)
            perf(
                f"Performance: {self.operation_name} completed in {duration_ms:.2f}ms",
                extra={
                    "performance_metrics": {
                        "operation": self.operation_name,
                        "duration_ms": duration_ms,
                        **self.metrics,
                    }
                },
            )
        else:
            self.logger.error(
                f"Failed {self.operation_name} after {duration_ms / 1000.0:.3f}s: {exc_val}"
            )

    @property
    def duration(self) -> Optional[float]:
        """Operation duration in seconds."""
        if self.start_time is not None and self.end_time is not None:
            return self.end_time - self.start_time
        return None


class SeedStreams:
    """
    Named, independent random generators derived from one root seed.

    A stream name is hashed with CRC-32 (stable across interpreter runs) and
    combined with the root seed through ``numpy.random.SeedSequence``, so each
    stage draws from its own generator regardless of what other stages consumed.
    """

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)

    def seed_sequence(self, name: str, *extra: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.root_seed, zlib.crc32(name.encode()), *extra])

    def generator(self, name: str, *extra: int) -> np.random.Generator:
        """Fresh generator for ``name`` (and optional integer qualifiers such as an epoch)."""
        return np.random.default_rng(self.seed_sequence(name, *extra))


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """Divide, returning ``default`` when the denominator is zero."""
    if denominator == 0:
        return default
    return numerator / denominator


def relative_change(before: float, after: float) -> float:
    return safe_divide(after - before, abs(before), default=float("inf") if after != before else 0.0)
