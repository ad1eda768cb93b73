"""
Report Models

Accuracy and timing results of a surrogate prediction.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


@dataclass(eq=False)
class PredictionReport:
    """Errors against the full-order reference plus wall-clock timings."""

    relative_l2: float
    final_time_l2: float
    pointwise_error: np.ndarray
    lsem_seconds: Optional[float] = None
    fom_seconds: Optional[float] = None
    scenario: str = "reproductive"
    n_elements: int = 0
    config_hash: str = ""
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def speedup(self) -> Optional[float]:
        if not self.lsem_seconds or self.fom_seconds is None:
            return None
        return self.fom_seconds / self.lsem_seconds

    def to_dict(self) -> Dict[str, Any]:
        """Scalar summary; the pointwise matrix is exported separately."""
        return {
            "scenario": self.scenario,
            "n_elements": self.n_elements,
            "relative_l2": self.relative_l2,
            "final_time_l2": self.final_time_l2,
            "max_pointwise_error": float(np.max(self.pointwise_error)) if self.pointwise_error.size else 0.0,
            "lsem_seconds": self.lsem_seconds,
            "fom_seconds": self.fom_seconds,
            "speedup": self.speedup,
            "config_hash": self.config_hash,
            **self.extras,
        }


@dataclass
class ScalingPoint:
    n_elements: int
    median_seconds: float


@dataclass
class TrainingRecord:
    """One row of the loss history."""

    epoch: int
    total: float
    ae: float
    ld: float
    reg: float
    seconds: float = 0.0

    def as_row(self) -> Tuple[int, float, float, float, float]:
        return (self.epoch, self.total, self.ae, self.ld, self.reg)


@dataclass
class TrainingHistory:
    records: List[TrainingRecord] = field(default_factory=list)

    def append(self, record: TrainingRecord) -> None:
        self.records.append(record)

    @property
    def totals(self) -> List[float]:
        return [r.total for r in self.records]

    def __len__(self) -> int:
        return len(self.records)
