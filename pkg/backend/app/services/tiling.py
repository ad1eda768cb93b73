"""
Element Tiling Service

Splits a global grid into overlapping elements, restricts global fields to
elements by slicing and blends element fields back together with cosine
windows that form a partition of unity.
"""

import math
from typing import List, Optional, Sequence

import numpy as np
import structlog

from app.core.exceptions import LayoutError, ValidationError
from app.models.layout import ElementLayout, ElementSpec, WindowTable
from app.models.snapshot import Grid1D

logger = structlog.get_logger(__name__)


def build_layout(
    grid: Grid1D,
    n_elements: int,
    overlap_points: int,
    type_assignment: Optional[Sequence[int]] = None,
    topology: str = "chain",
    nominal_local_points: Optional[int] = None,
) -> ElementLayout:
    """Tile ``grid`` with ``n_elements`` equal-sized elements.

    ``chain`` covers ``[0, n_points)`` left to right. When the widths do not
    divide evenly, the rightmost junctions share one extra point each so that
    every element keeps the same size. ``ring`` wraps around a periodic grid,
    centering each overlap on a stride boundary.
    """
    if n_elements < 1:
        raise LayoutError(f"n_elements must be >= 1, got {n_elements}")
    if overlap_points < 2:
        raise LayoutError(f"overlap_points must be >= 2, got {overlap_points}")
    types = list(type_assignment) if type_assignment is not None else [0] * n_elements
    if len(types) != n_elements:
        raise LayoutError(f"type_assignment has {len(types)} entries for {n_elements} elements")

    if topology == "chain":
        layout = _chain_layout(grid, n_elements, overlap_points, types)
    elif topology == "ring":
        layout = _ring_layout(grid, n_elements, overlap_points, types)
    else:
        raise LayoutError(f"Unknown topology '{topology}'")

    n_local = layout.elements[0].n_local
    if nominal_local_points is not None and nominal_local_points != n_local:
        logger.warning(
            "layout_local_size_deviation",
            nominal_local_points=nominal_local_points,
            n_local=n_local,
            overlap_points=overlap_points,
            overlap_length=layout.overlap_length,
        )
    logger.debug(
        "layout_built",
        topology=topology,
        n_elements=n_elements,
        n_local=n_local,
        overlap_points=overlap_points,
    )
    return layout


def _chain_layout(grid: Grid1D, n: int, overlap: int, types: List[int]) -> ElementLayout:
    total = grid.n_points + (n - 1) * overlap
    n_local = math.ceil(total / n)
    excess = n * n_local - total
    junctions = [overlap + 1 if j >= n - 1 - excess else overlap for j in range(n - 1)]

    elements = []
    start = 0
    for m in range(n):
        left = junctions[m - 1] if m > 0 else 0
        right = junctions[m] if m < n - 1 else 0
        interior = n_local - left - right
        if interior < 1:
            raise LayoutError(
                f"Overlap of {overlap} points leaves element {m} without interior "
                f"(n_local={n_local}, left={left}, right={right})"
            )
        elements.append(
            ElementSpec(
                type_id=int(types[m]),
                start_index=start,
                n_local=n_local,
                left_overlap=left,
                right_overlap=right,
                left_neighbor=m - 1 if m > 0 else None,
                right_neighbor=m + 1 if m < n - 1 else None,
            )
        )
        start += n_local - right
    if excess:
        logger.info("layout_remainder_distributed", extra_shared_points=excess, n_local=n_local)
    return ElementLayout(grid=grid, elements=tuple(elements), overlap_points=overlap, topology="chain")


def _ring_layout(grid: Grid1D, n: int, overlap: int, types: List[int]) -> ElementLayout:
    if not grid.periodic:
        raise LayoutError("ring topology requires a periodic grid")
    if n < 2:
        raise LayoutError("ring topology needs at least two elements")
    if grid.n_points % n:
        raise LayoutError(f"{grid.n_points} points cannot be split into {n} equal ring strides")
    stride = grid.n_points // n
    if overlap >= stride:
        raise LayoutError(
            f"Overlap of {overlap} points leaves no interior in ring elements of stride {stride}"
        )
    elements = tuple(
        ElementSpec(
            type_id=int(types[m]),
            start_index=(m * stride - overlap // 2) % grid.n_points,
            n_local=stride + overlap,
            left_overlap=overlap,
            right_overlap=overlap,
            left_neighbor=(m - 1) % n,
            right_neighbor=(m + 1) % n,
        )
        for m in range(n)
    )
    return ElementLayout(grid=grid, elements=elements, overlap_points=overlap, topology="ring")


def restrict(q_global: np.ndarray, layout: ElementLayout, m: int) -> np.ndarray:
    """Local field of element ``m``; slices the leading (space) axis."""
    q_global = np.asarray(q_global)
    if q_global.shape[0] != layout.grid.n_points:
        raise ValidationError(
            f"global field has {q_global.shape[0]} points, layout expects {layout.grid.n_points}",
            field="q_global",
        )
    segments = layout.segments(m)
    if len(segments) == 1:
        return q_global[segments[0][0]]
    return np.concatenate([q_global[g] for g, _ in segments], axis=0)


def restrict_all(q_global: np.ndarray, layout: ElementLayout) -> List[np.ndarray]:
    return [restrict(q_global, layout, m) for m in range(layout.n_elements)]


def _ramp(points: int) -> np.ndarray:
    """Cosine ramp from 0 to 1 over ``points`` nodes."""
    s = np.arange(points, dtype=np.float64) / (points - 1)
    return 0.5 - 0.5 * np.cos(np.pi * s)


def window_weights(layout: ElementLayout, m: int) -> np.ndarray:
    spec = layout.element(m)
    weights = np.ones(spec.n_local)
    if spec.left_neighbor is not None and spec.left_overlap:
        weights[: spec.left_overlap] = _ramp(spec.left_overlap)
    if spec.right_neighbor is not None and spec.right_overlap:
        # complement of the neighbour's left ramp over the same nodes
        weights[spec.n_local - spec.right_overlap:] = 1.0 - _ramp(spec.right_overlap)
    return weights


def window_table(layout: ElementLayout) -> WindowTable:
    return WindowTable(weights=tuple(window_weights(layout, m) for m in range(layout.n_elements)))


def reconstruct(
    locals_: Sequence[np.ndarray],
    layout: ElementLayout,
    windows: Optional[WindowTable] = None,
) -> np.ndarray:
    """Window-weighted superposition of element fields on the global grid."""
    if len(locals_) != layout.n_elements:
        raise ValidationError(
            f"got {len(locals_)} local fields for {layout.n_elements} elements", field="locals"
        )
    windows = windows or window_table(layout)
    trailing = np.asarray(locals_[0]).shape[1:]
    out = np.zeros((layout.grid.n_points,) + trailing)
    for m, local in enumerate(locals_):
        local = np.asarray(local, dtype=np.float64)
        spec = layout.elements[m]
        if local.shape != (spec.n_local,) + trailing:
            raise ValidationError(
                f"local field {m} has shape {local.shape}, expected {(spec.n_local,) + trailing}",
                field="locals",
            )
        weighted = local * windows[m].reshape((-1,) + (1,) * len(trailing))
        for g, loc in layout.segments(m):
            out[g] += weighted[loc]
    return out


def verify_partition_of_unity(layout: ElementLayout) -> float:
    """Max deviation of the summed windows from one over the whole grid."""
    ones = [np.ones(spec.n_local) for spec in layout.elements]
    return float(np.max(np.abs(reconstruct(ones, layout) - 1.0)))


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------

def _interface_indices(layout: ElementLayout, m: int):
    """Unwrapped grid positions of the element's left and right interfaces.

    On a periodic grid node ``j`` owns the cell ``[x_j, x_j + dx)``, so an
    overlap of ``k`` nodes spans ``k`` cells and its midpoint sits at ``k / 2``.
    Chain grids carry both end nodes and measure overlaps node to node.
    """
    spec = layout.element(m)
    cells = 1 if layout.grid.periodic else 0
    if spec.left_neighbor is not None:
        left = spec.start_index + 0.5 * (spec.left_overlap - 1 + cells)
    else:
        left = float(spec.start_index)
    last = spec.start_index + spec.n_local - 1 + cells
    if spec.right_neighbor is not None:
        right = last - 0.5 * (spec.right_overlap - 1 + cells)
    else:
        right = float(last)
    return left, right


def _coordinate(layout: ElementLayout, index: float) -> float:
    grid = layout.grid
    x = grid.x_min + grid.dx * index
    if grid.periodic:
        x = grid.x_min + math.fmod(x - grid.x_min, grid.length)
        if x < grid.x_min:
            x += grid.length
    return x


def left_interface(layout: ElementLayout, m: int) -> float:
    """Midpoint of the left overlap, or the element's first node at a physical boundary."""
    return _coordinate(layout, _interface_indices(layout, m)[0])


def element_center(layout: ElementLayout, m: int) -> float:
    left, right = _interface_indices(layout, m)
    return _coordinate(layout, 0.5 * (left + right))


def element_length(layout: ElementLayout, m: Optional[int] = None) -> float:
    """Interface-to-interface length of element ``m``, or the nominal stride."""
    if m is None:
        spec = layout.elements[0]
        return layout.grid.dx * (spec.n_local - layout.overlap_points)
    left, right = _interface_indices(layout, m)
    return layout.grid.dx * (right - left)


def grid_for_elements(layout: ElementLayout, n_elements: int) -> Grid1D:
    """Grid with the same spacing that ``n_elements`` copies of this element tile exactly."""
    grid = layout.grid
    n_local = layout.elements[0].n_local
    overlap = layout.overlap_points
    if layout.topology == "ring":
        n_points = n_elements * (n_local - overlap)
        return Grid1D(grid.x_min, grid.x_min + n_points * grid.dx, n_points, periodic=True)
    n_points = n_elements * n_local - (n_elements - 1) * overlap
    return Grid1D(grid.x_min, grid.x_min + (n_points - 1) * grid.dx, n_points, periodic=grid.periodic)


def scaled_layout(layout: ElementLayout, n_elements: int) -> ElementLayout:
    """Same element, same overlap, more copies."""
    grid = grid_for_elements(layout, n_elements)
    types = [layout.elements[0].type_id] * n_elements
    scaled = build_layout(grid, n_elements, layout.overlap_points, types, layout.topology)
    if scaled.elements[0].n_local != layout.elements[0].n_local:
        raise LayoutError("scaled layout changed the element size")
    return scaled
