"""
Evaluation Service

Surrogate inference on arbitrary layouts, error metrics against full-order
references and wall-clock comparisons.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
from scipy import signal

from app.core.exceptions import ValidationError, ZeroNormError
from app.core.metrics import MetricsCollector
from app.models.layout import ElementLayout
from app.models.lsem import LsemModel
from app.models.report import PredictionReport, ScalingPoint
from app.models.snapshot import SnapshotSet
from app.services import tiling
from app.services.latent_dynamics import assemble_global, integrate_latent

logger = structlog.get_logger(__name__)

FieldLike = Union[SnapshotSet, np.ndarray]


def _values(x: FieldLike) -> np.ndarray:
    return x.values if isinstance(x, SnapshotSet) else np.asarray(x, dtype=np.float64)


def relative_l2(pred: FieldLike, truth: FieldLike) -> float:
    """Frobenius norm of the error over the whole space-time matrix, relative to the truth."""
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValidationError(f"prediction shape {p.shape} != reference shape {t.shape}", field="pred")
    norm = float(np.linalg.norm(t))
    if norm == 0.0:
        raise ZeroNormError()
    return float(np.linalg.norm(p - t)) / norm


def final_time_l2(pred: FieldLike, truth: FieldLike) -> float:
    p, t = _values(pred), _values(truth)
    if p.ndim == 1:
        return relative_l2(p, t)
    return relative_l2(p[:, -1], t[:, -1])


def pointwise_error(pred: FieldLike, truth: FieldLike) -> np.ndarray:
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValidationError(f"prediction shape {p.shape} != reference shape {t.shape}", field="pred")
    return np.abs(p - t)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def encode_field(model: LsemModel, layout: ElementLayout, q: np.ndarray) -> np.ndarray:
    """Element-major stacked latents of a global field; 2-D input keeps time columns."""
    q = np.asarray(q, dtype=np.float64)
    latents = []
    for m, spec in enumerate(layout.elements):
        local = tiling.restrict(q, layout, m)
        latents.append(np.asarray(model.autoencoder(spec.type_id).encode(local.T)).T)
    return np.concatenate(latents, axis=0)


def decode_latents(model: LsemModel, layout: ElementLayout, z_global: np.ndarray) -> np.ndarray:
    """Decode ``(n * n_z, N_t)`` latents element by element and blend them on the grid."""
    n_z = model.latent_dim
    n_t = z_global.shape[1]
    per_element = torch.as_tensor(z_global.T.reshape(n_t, layout.n_elements, n_z).copy())
    locals_: List[Optional[np.ndarray]] = [None] * layout.n_elements
    with torch.no_grad():
        for type_id in layout.type_ids:
            members = [m for m, e in enumerate(layout.elements) if e.type_id == type_id]
            decoded = model.autoencoder(type_id).decoder(per_element[:, members, :]).numpy()
            for j, m in enumerate(members):
                locals_[m] = decoded[:, j, :].T
    return tiling.reconstruct(locals_, layout)


def predict_latent(model: LsemModel, layout: ElementLayout, q0: np.ndarray, times: np.ndarray) -> np.ndarray:
    model.check_layout(layout)
    system = assemble_global(model.dynamics, layout)
    z0 = encode_field(model, layout, q0)
    return integrate_latent(system, model.dynamics, z0, times)


def predict(model: LsemModel, layout: ElementLayout, q0: np.ndarray, times: np.ndarray) -> SnapshotSet:
    """Restrict, encode, integrate the coupled latent system, decode and blend."""
    z = predict_latent(model, layout, q0, times)
    values = decode_latents(model, layout, z)
    return SnapshotSet(grid=layout.grid, times=np.asarray(times, dtype=np.float64), values=values)


def latent_comparison(model: LsemModel, layout: ElementLayout, snapshots: SnapshotSet) -> Tuple[np.ndarray, np.ndarray]:
    """(integrated latents from the first snapshot, encodings of every snapshot)."""
    if snapshots.grid.n_points != layout.grid.n_points:
        raise ValidationError("snapshots do not live on the layout's grid", field="snapshots")
    predicted = predict_latent(model, layout, snapshots.values[:, 0], snapshots.times)
    encoded = encode_field(model, layout, snapshots.values)
    return predicted, encoded


def reconstruction_error(model: LsemModel, layout: ElementLayout, snapshots: SnapshotSet) -> float:
    """Autoencoder-only error: encode and decode every snapshot, no dynamics."""
    model.check_layout(layout)
    recon = decode_latents(model, layout, encode_field(model, layout, snapshots.values))
    return relative_l2(recon, snapshots.values)


def build_report(
    pred: SnapshotSet,
    truth: SnapshotSet,
    scenario: str,
    n_elements: int,
    config_hash: str = "",
    lsem_seconds: Optional[float] = None,
    fom_seconds: Optional[float] = None,
    extras: Optional[Dict[str, float]] = None,
) -> PredictionReport:
    return PredictionReport(
        relative_l2=relative_l2(pred, truth),
        final_time_l2=final_time_l2(pred, truth),
        pointwise_error=pointwise_error(pred, truth),
        lsem_seconds=lsem_seconds,
        fom_seconds=fom_seconds,
        scenario=scenario,
        n_elements=n_elements,
        config_hash=config_hash,
        extras=dict(extras or {}),
    )


def benchmark(
    model: LsemModel,
    layout: ElementLayout,
    q0: np.ndarray,
    times: np.ndarray,
    fom_solver: Callable[[], SnapshotSet],
    repeats: int = 3,
    scenario: str = "benchmark",
    config_hash: str = "",
    metrics: Optional[MetricsCollector] = None,
) -> PredictionReport:
    """Median wall-clock of both paths over ``repeats`` runs, plus the accuracy of the last run."""
    if repeats < 3:
        raise ValidationError("benchmarks need at least 3 repetitions", field="repeats")
    metrics = metrics or MetricsCollector()
    pred = truth = None
    for _ in range(repeats):
        with metrics.timer("lsem", {"scenario": scenario}):
            pred = predict(model, layout, q0, times)
        with metrics.timer("fom", {"scenario": scenario}):
            truth = fom_solver()
    if truth.shape != pred.shape:
        raise ValidationError("full-order and surrogate time grids differ", field="times")
    lsem_seconds = metrics.median("lsem_seconds", {"scenario": scenario})
    fom_seconds = metrics.median("fom_seconds", {"scenario": scenario})
    report = build_report(
        pred, truth, scenario, layout.n_elements, config_hash,
        lsem_seconds=lsem_seconds, fom_seconds=fom_seconds,
    )
    logger.info(
        "benchmark_completed",
        scenario=scenario,
        lsem_seconds=lsem_seconds,
        fom_seconds=fom_seconds,
        speedup=report.speedup,
        relative_l2=report.relative_l2,
    )
    return report


def scaling_curve(
    model: LsemModel,
    element_counts: Sequence[int],
    horizon: int,
    dt: float,
    repeats: int = 3,
) -> List[ScalingPoint]:
    """Median inference time on zero initial conditions for chains of each size."""
    metrics = MetricsCollector()
    times = dt * np.arange(horizon + 1, dtype=np.float64)
    points = []
    for n in element_counts:
        layout = tiling.scaled_layout(model.layout, n)
        q0 = np.zeros(layout.grid.n_points)
        for _ in range(repeats):
            with metrics.timer("inference", {"n": str(n)}):
                predict(model, layout, q0, times)
        point = ScalingPoint(n_elements=n, median_seconds=metrics.median("inference_seconds", {"n": str(n)}))
        logger.info("scaling_point", n_elements=n, median_seconds=point.median_seconds)
        points.append(point)
    return points


# ---------------------------------------------------------------------------
# Field diagnostics
# ---------------------------------------------------------------------------

def count_peaks(field: np.ndarray, height: float, periodic: bool = False) -> Tuple[int, np.ndarray]:
    """Number and grid indices of local maxima above ``height``."""
    field = np.asarray(field, dtype=np.float64)
    if not periodic:
        peaks, _ = signal.find_peaks(field, height=height)
        return int(peaks.size), peaks
    # rotate so the global minimum sits at the ends and no peak straddles the seam
    shift = int(np.argmin(field))
    peaks, _ = signal.find_peaks(np.roll(field, -shift), height=height)
    indices = np.sort((peaks + shift) % field.size)
    return int(indices.size), indices


def seam_jump_ratio(field: np.ndarray, layout: ElementLayout) -> float:
    """Largest increment next to an overlap midpoint over the largest increment elsewhere."""
    field = np.asarray(field, dtype=np.float64)
    n = layout.grid.n_points
    jumps = np.abs(np.roll(field, -1) - field) if layout.grid.periodic else np.abs(np.diff(field))
    seam = np.zeros(jumps.size, dtype=bool)
    for spec in layout.elements:
        if spec.right_neighbor is None:
            continue
        mid = spec.start_index + spec.n_local - spec.right_overlap + (spec.right_overlap - 1) // 2
        for i in (mid - 1, mid, mid + 1):
            idx = i % n if layout.grid.periodic else i
            if 0 <= idx < jumps.size:
                seam[idx] = True
    seam_max = float(np.max(jumps[seam])) if seam.any() else 0.0
    interior_max = float(np.max(jumps[~seam])) if (~seam).any() else 0.0
    if interior_max == 0.0:
        return 0.0 if seam_max == 0.0 else float("inf")
    return seam_max / interior_max
