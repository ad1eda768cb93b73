"""
Snapshot Models

Uniform 1D grids and space-time solution matrices produced by the full-order
solvers and consumed by training and evaluation.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from app.core.exceptions import ValidationError
from app.core.validation import ArrayValidator


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [x_min, x_max]; a periodic grid omits the node at x_max."""

    x_min: float
    x_max: float
    n_points: int
    periodic: bool = False

    def __post_init__(self):
        if self.n_points < 3:
            raise ValidationError(f"n_points must be >= 3, got {self.n_points}", field="n_points")
        if not self.x_max > self.x_min:
            raise ValidationError("x_max must exceed x_min", field="x_max")

    @property
    def dx(self) -> float:
        span = self.x_max - self.x_min
        return span / self.n_points if self.periodic else span / (self.n_points - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points, dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "n_points": self.n_points,
            "periodic": self.periodic,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Grid1D":
        return cls(
            x_min=float(data["x_min"]),
            x_max=float(data["x_max"]),
            n_points=int(data["n_points"]),
            periodic=bool(data["periodic"]),
        )


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Solution samples ``values[i, k] = q(x_i, t_k)``."""

    grid: Grid1D
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = ArrayValidator.as_float_array(self.times, "times")
        values = ArrayValidator.as_float_array(self.values, "values")
        ArrayValidator.require_ndim(times, 1, "times")
        ArrayValidator.require_ndim(values, 2, "values")
        ArrayValidator.require_length(values, self.grid.n_points, "values", axis=0)
        ArrayValidator.require_length(values, times.size, "values", axis=1)
        if times.size >= 2:
            ArrayValidator.require_uniform(times, "times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_steps(cls, grid: Grid1D, dt: float, values: np.ndarray, t0: float = 0.0) -> "SnapshotSet":
        n_times = np.asarray(values).shape[1]
        return cls(grid=grid, times=t0 + dt * np.arange(n_times, dtype=np.float64), values=values)

    @property
    def n_times(self) -> int:
        return int(self.times.size)

    @property
    def dt(self) -> float:
        if self.n_times < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def subsample(self, stride: int) -> "SnapshotSet":
        """Keep every ``stride``-th time column."""
        if stride < 1:
            raise ValidationError("stride must be positive", field="stride")
        return SnapshotSet(grid=self.grid, times=self.times[::stride], values=self.values[:, ::stride])


@dataclass(frozen=True)
class KdvIcSpec:
    """Reproducible description of a multi-soliton initial condition."""

    amplitudes: Tuple[int, ...]
    centers: Tuple[float, ...]
    seed: int
    attempt: int = 0

    def __post_init__(self):
        if len(self.amplitudes) != len(self.centers):
            raise ValidationError("amplitudes and centers must have equal length", field="centers")
        if not any(self.amplitudes):
            raise ValidationError("at least one soliton amplitude must be 1", field="amplitudes")

    @property
    def active(self) -> int:
        return int(sum(self.amplitudes))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "amplitudes": list(self.amplitudes),
            "centers": list(self.centers),
            "seed": self.seed,
            "attempt": self.attempt,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KdvIcSpec":
        return cls(
            amplitudes=tuple(int(a) for a in data["amplitudes"]),
            centers=tuple(float(c) for c in data["centers"]),
            seed=int(data["seed"]),
            attempt=int(data.get("attempt", 0)),
        )


@dataclass
class Simulation:
    """One generated dataset: its snapshots plus the IC provenance."""

    name: str
    snapshots: SnapshotSet
    ic: Dict[str, Any] = field(default_factory=dict)
