"""
QRobust Performance Monitoring Module
Circuit-evaluation counters, stage timings and host resource snapshots for
run manifests.
"""

import platform
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from datetime import datetime
from statistics import mean, median, stdev
from typing import Any, Dict, Optional

import psutil

from qr_logging import log_performance


@dataclass
class PerformanceMetric:
    """Individual performance metric with statistical tracking."""

    name: str
    values: deque = field(default_factory=lambda: deque(maxlen=1000))
    unit: str = "ms"
    description: str = ""

    def add_value(self, value: float) -> None:
        self.values.append(value)

    def summary(self) -> Dict[str, Any]:
        values = list(self.values)
        return {
            "name": self.name,
            "description": self.description,
            "unit": self.unit,
            "count": len(values),
            "latest": values[-1] if values else None,
            "average": mean(values) if values else None,
            "median": median(values) if values else None,
            "std_dev": stdev(values) if len(values) > 1 else None,
            "min": min(values) if values else None,
            "max": max(values) if values else None,
        }


@dataclass
class SystemMetrics:
    """Host resource snapshot."""

    cpu_count: int = 0
    cpu_percent: float = 0.0
    memory_total_mb: float = 0.0
    memory_available_mb: float = 0.0
    process_rss_mb: float = 0.0
    python_version: str = ""
    platform: str = ""
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat())


def system_snapshot() -> SystemMetrics:
    """Collect a one-off host resource snapshot via psutil."""
    memory = psutil.virtual_memory()
    try:
        rss = psutil.Process().memory_info().rss / (1024 * 1024)
    except psutil.Error:
        rss = 0.0
    return SystemMetrics(
        cpu_count=psutil.cpu_count(logical=True) or 0,
        cpu_percent=psutil.cpu_percent(interval=None),
        memory_total_mb=memory.total / (1024 * 1024),
        memory_available_mb=memory.available / (1024 * 1024),
        process_rss_mb=rss,
        python_version=platform.python_version(),
        platform=platform.platform(),
    )


class PerformanceMonitor:
    """Thread-safe counters and timers for the simulation pipeline."""

    def __init__(self):
        self.metrics: Dict[str, PerformanceMetric] = {}
        self.counters: Dict[str, int] = defaultdict(int)
        self.timers: Dict[str, float] = {}
        self._lock = threading.RLock()

    def add_metric_value(self, name: str, value: float, unit: str = "ms", description: str = "") -> None:
        with self._lock:
            if name not in self.metrics:
                self.metrics[name] = PerformanceMetric(name=name, unit=unit, description=description)
            self.metrics[name].add_value(value)

    def start_timer(self, operation: str) -> None:
        with self._lock:
            self.timers[operation] = time.perf_counter()

    def end_timer(self, operation: str) -> Optional[float]:
        """End timing an operation and record the duration in milliseconds."""
        with self._lock:
            start = self.timers.pop(operation, None)
        if start is None:
            return None
        duration = (time.perf_counter() - start) * 1000.0
        self.add_metric_value(f"operation.{operation}", duration, "ms", f"Duration of {operation}")
        return duration

    def increment_counter(self, counter_name: str, amount: int = 1) -> None:
        with self._lock:
            self.counters[counter_name] += amount

    def reset(self) -> None:
        with self._lock:
            self.metrics.clear()
            self.counters.clear()
            self.timers.clear()

    def metric_summaries(self) -> Dict[str, Dict[str, Any]]:
        with self._lock:
            return {name: m.summary() for name, m in self.metrics.items()}

class PerformanceProfiler:
    """Context manager recording a block's duration and call count on a monitor."""

    def __init__(self, monitor: PerformanceMonitor, operation_name: str):
        self.monitor = monitor
        self.operation_name = operation_name
        self.duration: Optional[float] = None

    def __enter__(self):
        self.monitor.start_timer(self.operation_name)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = self.monitor.end_timer(self.operation_name)
        self.monitor.increment_counter(f"operation.{self.operation_name}.count")
        if exc_type is not None:
            self.monitor.increment_counter(f"operation.{self.operation_name}.errors")
        else:
            log_performance(self.operation_name, self.duration)


# Global performance monitor instance
performance_monitor = PerformanceMonitor()
