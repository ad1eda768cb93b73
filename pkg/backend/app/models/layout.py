"""
Layout Models

Element tilings of a 1D grid, their adjacency and their window tables.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.core.exceptions import LayoutError
from app.models.snapshot import Grid1D

# Direction of a neighbour as seen from the element it acts on. 1D layouts only
# produce "l" and "r"; the 2D labels are reserved for tilings of the plane.
DIRECTIONS: Tuple[str, ...] = ("tl", "t", "tr", "l", "r", "bl", "b", "br")
OPPOSITE: Dict[str, str] = {
    "l": "r", "r": "l",
    "t": "b", "b": "t",
    "tl": "br", "br": "tl",
    "tr": "bl", "bl": "tr",
}


@dataclass(frozen=True)
class ElementSpec:
    """One element: its type, its index range and its neighbours."""

    type_id: int
    start_index: int
    n_local: int
    left_overlap: int = 0
    right_overlap: int = 0
    left_neighbor: Optional[int] = None
    right_neighbor: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type_id": self.type_id,
            "start_index": self.start_index,
            "n_local": self.n_local,
            "left_overlap": self.left_overlap,
            "right_overlap": self.right_overlap,
            "left_neighbor": self.left_neighbor,
            "right_neighbor": self.right_neighbor,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ElementSpec":
        return cls(**data)


@dataclass(frozen=True)
class Edge:
    """Coupling ``source -> target``; ``direction`` locates the source relative to the target."""

    source: int
    target: int
    direction: str


@dataclass(frozen=True)
class ElementLayout:
    """Ordered overlapping elements covering a grid (``chain``) or wrapping it (``ring``)."""

    grid: Grid1D
    elements: Tuple[ElementSpec, ...]
    overlap_points: int
    topology: str = "chain"

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def type_ids(self) -> Tuple[int, ...]:
        return tuple(sorted({e.type_id for e in self.elements}))

    @property
    def overlap_length(self) -> float:
        """Physical ramp length of a nominal overlap."""
        return (self.overlap_points - 1) * self.grid.dx

    def element(self, m: int) -> ElementSpec:
        if not 0 <= m < self.n_elements:
            raise LayoutError(f"Element index {m} out of range [0, {self.n_elements})")
        return self.elements[m]

    def segments(self, m: int) -> List[Tuple[slice, slice]]:
        """(global slice, local slice) pairs; two pairs when a ring element wraps."""
        spec = self.element(m)
        n = self.grid.n_points
        end = spec.start_index + spec.n_local
        if end <= n:
            return [(slice(spec.start_index, end), slice(0, spec.n_local))]
        head = n - spec.start_index
        return [
            (slice(spec.start_index, n), slice(0, head)),
            (slice(0, end - n), slice(head, spec.n_local)),
        ]

    def indices(self, m: int) -> np.ndarray:
        spec = self.element(m)
        return (spec.start_index + np.arange(spec.n_local)) % self.grid.n_points

    def edges(self) -> List[Edge]:
        found: List[Edge] = []
        for m, spec in enumerate(self.elements):
            if spec.left_neighbor is not None:
                found.append(Edge(source=spec.left_neighbor, target=m, direction="l"))
            if spec.right_neighbor is not None:
                found.append(Edge(source=spec.right_neighbor, target=m, direction="r"))
        return found

    def describe(self) -> Dict[str, Any]:
        return {
            "grid": self.grid.to_dict(),
            "overlap_points": self.overlap_points,
            "topology": self.topology,
            "elements": [e.to_dict() for e in self.elements],
        }

    @classmethod
    def from_description(cls, data: Dict[str, Any]) -> "ElementLayout":
        return cls(
            grid=Grid1D.from_dict(data["grid"]),
            elements=tuple(ElementSpec.from_dict(e) for e in data["elements"]),
            overlap_points=int(data["overlap_points"]),
            topology=str(data["topology"]),
        )


@dataclass(frozen=True, eq=False)
class WindowTable:
    """Per-element blending weights, one vector of length ``n_local`` each."""

    weights: Tuple[np.ndarray, ...]

    def __getitem__(self, m: int) -> np.ndarray:
        return self.weights[m]

    def __len__(self) -> int:
        return len(self.weights)
