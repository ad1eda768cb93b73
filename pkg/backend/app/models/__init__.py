"""
Models Package

Immutable domain records shared by the services and the pipeline stages.
The trained-model container lives in ``app.models.lsem``.
"""

from .snapshot import Grid1D, KdvIcSpec, Simulation, SnapshotSet
from .layout import DIRECTIONS, OPPOSITE, Edge, ElementLayout, ElementSpec, WindowTable
from .report import PredictionReport, ScalingPoint, TrainingHistory, TrainingRecord

__all__ = [
    "Grid1D",
    "KdvIcSpec",
    "Simulation",
    "SnapshotSet",
    "DIRECTIONS",
    "OPPOSITE",
    "Edge",
    "ElementLayout",
    "ElementSpec",
    "WindowTable",
    "PredictionReport",
    "ScalingPoint",
    "TrainingHistory",
    "TrainingRecord",
]
