"""
Input validation utilities for arrays and layer sizes.
"""
from typing import Sequence, Tuple

import numpy as np

from app.core.exceptions import ValidationError


class ArrayValidator:
    """Shape and value checks shared by the numerical services."""

    @classmethod
    def as_float_array(cls, value, field: str) -> np.ndarray:
        try:
            array = np.asarray(value, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"{field} must be numeric: {e}", field=field) from e
        return array

    @classmethod
    def require_ndim(cls, array: np.ndarray, ndim: int, field: str) -> None:
        if array.ndim != ndim:
            raise ValidationError(
                f"{field} must be {ndim}-dimensional, got shape {array.shape}", field=field
            )

    @classmethod
    def require_length(cls, array: np.ndarray, length: int, field: str, axis: int = 0) -> None:
        if array.shape[axis] != length:
            raise ValidationError(
                f"{field} has {array.shape[axis]} entries along axis {axis}, expected {length}",
                field=field,
            )

    @classmethod
    def require_same_shape(cls, a: np.ndarray, b: np.ndarray, field: str) -> None:
        if a.shape != b.shape:
            raise ValidationError(f"{field}: shape mismatch {a.shape} vs {b.shape}", field=field)

    @classmethod
    def require_uniform(cls, values: np.ndarray, field: str, rtol: float = 1e-12) -> float:
        """Return the spacing of a uniformly spaced 1D array."""
        values = np.asarray(values, dtype=np.float64)
        if values.size < 2:
            raise ValidationError(f"{field} needs at least two entries", field=field)
        steps = np.diff(values)
        spacing = float(steps[0])
        if spacing <= 0 or np.max(np.abs(steps - spacing)) > rtol * max(abs(spacing), 1.0):
            raise ValidationError(f"{field} must be uniformly increasing", field=field)
        return spacing


def validate_layer_sizes(sizes: Sequence[int], field: str = "layer_sizes") -> Tuple[int, ...]:
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValidationError(f"{field} needs at least two positive sizes, got {sizes}", field=field)
    return sizes
