"""
Timing and metrics collection utilities.

Used by the benchmark and scaling stages to time full-order and reduced-order
runs and report medians.
"""
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class MetricPoint:
    """A single metric data point."""
    name: str
    value: float
    tags: Dict[str, str] = field(default_factory=dict)


class MetricsCollector:
    """Collects timing histograms in memory."""

    def __init__(self):
        self.metrics: List[MetricPoint] = []
        self.histograms: Dict[str, List[float]] = {}

    @staticmethod
    def _key(name: str, tags: Optional[Dict[str, str]]) -> str:
        if not tags:
            return name
        return f"{name}:{','.join(f'{k}={v}' for k, v in sorted(tags.items()))}"

    def histogram(self, name: str, value: float, tags: Optional[Dict[str, str]] = None) -> None:
        self.histograms.setdefault(self._key(name, tags), []).append(value)
        self.metrics.append(MetricPoint(name=name, value=value, tags=tags or {}))

    @contextmanager
    def timer(self, name: str, tags: Optional[Dict[str, str]] = None):
        """Context manager for wall-clock timing; records ``<name>_seconds``."""
        start_time = time.perf_counter()
        try:
            yield
        finally:
            self.histogram(f"{name}_seconds", time.perf_counter() - start_time, tags)

    def samples(self, name: str, tags: Optional[Dict[str, str]] = None) -> List[float]:
        return list(self.histograms.get(self._key(name, tags), []))

    def median(self, name: str, tags: Optional[Dict[str, str]] = None) -> float:
        values = self.samples(name, tags)
        if not values:
            raise KeyError(f"No samples recorded for {self._key(name, tags)}")
        return float(statistics.median(values))

    def get_metrics_summary(self) -> Dict[str, Any]:
        """Get summary of collected metrics."""
        return {
            "histograms": {
                k: {
                    "count": len(v),
                    "sum": sum(v),
                    "median": statistics.median(v) if v else 0.0,
                    "min": min(v) if v else 0.0,
                }
                for k, v in self.histograms.items()
            },
            "total_points": len(self.metrics),
        }
