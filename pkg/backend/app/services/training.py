"""
Training Service

Joint training of the element autoencoders and the interaction blocks:
encoding of subdomain snapshots, finite-difference latent derivatives, the
noise-perturbed reconstruction loss, the latent dynamics loss and the
stability regularizers.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
from scipy import linalg

from app.core.config import AutoencoderConfig, TrainConfig
from app.core.exceptions import TrainingDivergedError, ValidationError
from app.core.logging_config import report_progress
from app.models.layout import Edge, ElementLayout
from app.models.report import TrainingHistory, TrainingRecord
from app.models.snapshot import SnapshotSet
from app.services import tiling
from app.services.autoencoder import Autoencoder
from app.services.latent_dynamics import (
    FeatureLibrary,
    GlobalSystem,
    InteractionDynamics,
    dense_operator,
    global_rhs,
    torch_rhs,
)
from app.services.optimizers import build_optimizer, build_scheduler

logger = structlog.get_logger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor]


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------

@dataclass
class TrainingSample:
    """Subdomain snapshots of one simulation, grouped by element type.

    ``q_by_type[r]`` has shape ``(N_t, n_elements_of_type_r, n_local_r)``.
    """

    name: str
    layout: ElementLayout
    q_by_type: Dict[int, torch.Tensor]
    index_by_type: Dict[int, torch.Tensor]
    edges: List[Edge]

    @property
    def n_elements(self) -> int:
        return self.layout.n_elements

    @property
    def n_times(self) -> int:
        return next(iter(self.q_by_type.values())).shape[0]

    @classmethod
    def from_snapshots(cls, name: str, snapshots: SnapshotSet, layout: ElementLayout) -> "TrainingSample":
        if snapshots.grid.n_points != layout.grid.n_points:
            raise ValidationError(
                f"snapshot grid has {snapshots.grid.n_points} points, layout expects {layout.grid.n_points}",
                field="snapshots",
            )
        locals_ = tiling.restrict_all(snapshots.values, layout)
        q_by_type: Dict[int, torch.Tensor] = {}
        index_by_type: Dict[int, torch.Tensor] = {}
        for type_id in layout.type_ids:
            members = [m for m, e in enumerate(layout.elements) if e.type_id == type_id]
            stacked = np.stack([locals_[m].T for m in members], axis=1)
            q_by_type[type_id] = torch.as_tensor(np.ascontiguousarray(stacked), dtype=torch.float64)
            index_by_type[type_id] = torch.tensor(members, dtype=torch.long)
        return cls(name=name, layout=layout, q_by_type=q_by_type, index_by_type=index_by_type, edges=layout.edges())


@dataclass
class TrainingSet:
    samples: List[TrainingSample]
    dt: float

    def __post_init__(self):
        if not self.samples:
            raise ValidationError("training set is empty", field="samples")
        sizes: Dict[int, int] = {}
        for sample in self.samples:
            for type_id, q in sample.q_by_type.items():
                if sizes.setdefault(type_id, q.shape[-1]) != q.shape[-1]:
                    raise ValidationError(
                        f"element type {type_id} has inconsistent local sizes", field="samples"
                    )
            if sample.n_times < 3:
                raise ValidationError("training needs at least 3 snapshots per simulation", field="samples")

    @property
    def local_sizes(self) -> Dict[int, int]:
        return {t: q.shape[-1] for s in self.samples for t, q in s.q_by_type.items()}

    @classmethod
    def from_snapshots(
        cls,
        snapshot_sets: Sequence[SnapshotSet],
        layout: ElementLayout,
        time_stride: int = 1,
        names: Optional[Sequence[str]] = None,
    ) -> "TrainingSet":
        names = list(names) if names is not None else [f"sim_{i:03d}" for i in range(len(snapshot_sets))]
        reduced = [s.subsample(time_stride) for s in snapshot_sets]
        dts = {round(s.dt, 15) for s in reduced}
        if len(dts) != 1:
            raise ValidationError(f"simulations use different time steps {sorted(dts)}", field="dt")
        samples = [TrainingSample.from_snapshots(n, s, layout) for n, s in zip(names, reduced)]
        return cls(samples=samples, dt=reduced[0].dt)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def time_derivative(z: ArrayLike, dt: float, axis: int = -1) -> ArrayLike:
    """Second-order finite differences in time; one-sided at both ends."""
    if z.shape[axis] < 3:
        raise ValidationError(f"need at least 3 time samples, got {z.shape[axis]}", field="z")
    if dt <= 0:
        raise ValidationError("dt must be positive", field="dt")
    if isinstance(z, torch.Tensor):
        moved = torch.movedim(z, axis, -1)
        cat, back = torch.cat, lambda x: torch.movedim(x, -1, axis)
    else:
        z = np.asarray(z, dtype=np.float64)
        moved = np.moveaxis(z, axis, -1)
        cat, back = np.concatenate, lambda x: np.moveaxis(x, -1, axis)
    first = (-3.0 * moved[..., 0:1] + 4.0 * moved[..., 1:2] - moved[..., 2:3]) / (2.0 * dt)
    inner = (moved[..., 2:] - moved[..., :-2]) / (2.0 * dt)
    last = (3.0 * moved[..., -1:] - 4.0 * moved[..., -2:-1] + moved[..., -3:-2]) / (2.0 * dt)
    return back(cat([first, inner, last], -1))


def encode_sample(autoencoders: Dict[int, Autoencoder], sample: TrainingSample) -> torch.Tensor:
    """Latent trajectory of one simulation, shape ``(N_t, n_elements, n_z)``."""
    n_z = next(iter(autoencoders.values())).latent_dim
    z = torch.zeros((sample.n_times, sample.n_elements, n_z), dtype=torch.float64)
    for type_id, q in sample.q_by_type.items():
        ae = autoencoders[type_id]
        if ae.n_local != q.shape[-1]:
            raise ValidationError(
                f"autoencoder for type {type_id} expects {ae.n_local} points, data has {q.shape[-1]}",
                field="autoencoders",
            )
        z = z.index_copy(1, sample.index_by_type[type_id], ae.encoder(q))
    return z


def stack_latents(z: torch.Tensor) -> np.ndarray:
    """``(N_t, n, n_z)`` tensor to the element-major ``(n * n_z, N_t)`` matrix."""
    n_t = z.shape[0]
    return z.detach().reshape(n_t, -1).T.numpy().copy()


def unstack_latents(z_global: np.ndarray, n_elements: int) -> torch.Tensor:
    z_global = np.asarray(z_global, dtype=np.float64)
    n_t = z_global.shape[1]
    return torch.as_tensor(z_global.T.reshape(n_t, n_elements, -1).copy())


def encode_training_set(autoencoders: Dict[int, Autoencoder], training_set: TrainingSet) -> List[np.ndarray]:
    with torch.no_grad():
        return [stack_latents(encode_sample(autoencoders, s)) for s in training_set.samples]


def _ld_residual(z: torch.Tensor, dyn: InteractionDynamics, edges: Sequence[Edge], dt: float) -> torch.Tensor:
    return time_derivative(z, dt, axis=0) - torch_rhs(dyn, z, edges)


def noise_std(
    z_global: np.ndarray,
    dyn: InteractionDynamics,
    system: GlobalSystem,
    beta: float,
    dt: float,
) -> np.ndarray:
    """``beta * k * RMS(latent ODE residual)`` for time index ``k``."""
    z_global = np.asarray(z_global, dtype=np.float64)
    n_t = z_global.shape[1]
    if beta == 0:
        return np.zeros(n_t)
    with torch.no_grad():
        residual = time_derivative(z_global, dt, axis=1) - global_rhs(system, dyn, z_global)
    rms = float(np.sqrt(np.mean(residual**2)))
    return beta * rms * np.arange(n_t, dtype=np.float64)


def _noise_scale(z: torch.Tensor, dyn: InteractionDynamics, edges: Sequence[Edge], beta: float, dt: float) -> torch.Tensor:
    n_t = z.shape[0]
    if beta == 0:
        return torch.zeros(n_t, dtype=torch.float64)
    with torch.no_grad():
        rms = torch.sqrt(torch.mean(_ld_residual(z.detach(), dyn, edges, dt) ** 2))
    return beta * rms * torch.arange(n_t, dtype=torch.float64)


def draw_noise(
    zs: Sequence[torch.Tensor],
    dyn: InteractionDynamics,
    training_set: TrainingSet,
    beta: float,
    generator: torch.Generator,
) -> List[torch.Tensor]:
    """Fresh latent perturbations, ``N(0, eps_k^2)`` per time column."""
    noises = []
    for z, sample in zip(zs, training_set.samples):
        scale = _noise_scale(z, dyn, sample.edges, beta, training_set.dt)
        draw = torch.randn(z.shape, generator=generator, dtype=torch.float64)
        noises.append(draw * scale.reshape(-1, 1, 1))
    return noises


def loss_ae(
    autoencoders: Dict[int, Autoencoder],
    training_set: TrainingSet,
    noise: Optional[Sequence[torch.Tensor]] = None,
    zs: Optional[Sequence[torch.Tensor]] = None,
) -> torch.Tensor:
    """Per-element reconstruction MSE summed over elements, averaged over simulations."""
    if zs is None:
        zs = [encode_sample(autoencoders, s) for s in training_set.samples]
    total = torch.zeros((), dtype=torch.float64)
    for i, (sample, z) in enumerate(zip(training_set.samples, zs)):
        perturbed = z if noise is None else z + noise[i]
        for type_id, q in sample.q_by_type.items():
            decoded = autoencoders[type_id].decoder(perturbed.index_select(1, sample.index_by_type[type_id]))
            total = total + ((q - decoded) ** 2).mean(dim=(0, 2)).sum()
    return total / len(training_set.samples)


def loss_ld(
    zs: Sequence[torch.Tensor],
    dyn: InteractionDynamics,
    training_set: TrainingSet,
) -> torch.Tensor:
    """Mean over simulations of the MSE between ``D_t Z`` and the modeled derivative."""
    total = torch.zeros((), dtype=torch.float64)
    for z, sample in zip(zs, training_set.samples):
        total = total + torch.mean(_ld_residual(z, dyn, sample.edges, training_set.dt) ** 2)
    return total / len(zs)


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------

def _eigen_penalty(matrix: np.ndarray) -> float:
    eigenvalues = linalg.eigvals(matrix)
    return float(np.sum(np.maximum(eigenvalues.real, 0.0) ** 2))


def _eigen_penalty_grad(matrix: np.ndarray, condition_limit: float) -> np.ndarray:
    """Gradient of the eigen penalty via left/right eigenvector adjoints."""
    eigenvalues, left, right = linalg.eig(matrix, left=True, right=True)
    grad = np.zeros_like(matrix)
    active = np.flatnonzero(eigenvalues.real > 0)
    for i in active:
        x, y = right[:, i], left[:, i]
        denom = np.vdot(y, x)
        condition = np.linalg.norm(x) * np.linalg.norm(y) / max(abs(denom), 1e-300)
        if condition > condition_limit:
            logger.warning(
                "eigen_gradient_fallback",
                condition=float(condition),
                limit=condition_limit,
                size=matrix.shape[0],
            )
            return _finite_difference_grad(matrix)
        grad += 2.0 * eigenvalues[i].real * np.real(np.outer(np.conj(y), x) / denom)
    return grad


def _finite_difference_grad(matrix: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(matrix)
    for idx in np.ndindex(matrix.shape):
        plus, minus = matrix.copy(), matrix.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (_eigen_penalty(plus) - _eigen_penalty(minus)) / (2.0 * h)
    return grad


class _EigenPenalty(torch.autograd.Function):
    @staticmethod
    def forward(ctx, matrix: torch.Tensor, condition_limit: float):
        array = matrix.detach().cpu().numpy()
        ctx.save_for_backward(torch.as_tensor(_eigen_penalty_grad(array, condition_limit)))
        return matrix.new_tensor(_eigen_penalty(array))

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad_output * grad, None


def reg_eigen(operator: ArrayLike, condition_limit: float = 1e8) -> ArrayLike:
    """Sum of squared positive real parts of the operator's eigenvalues."""
    if operator.shape[0] != operator.shape[1]:
        raise ValidationError(
            f"eigen regularizer needs a square operator (linear library), got {tuple(operator.shape)}",
            field="operator",
        )
    if isinstance(operator, torch.Tensor):
        return _EigenPenalty.apply(operator, condition_limit)
    return _eigen_penalty(np.asarray(operator, dtype=np.float64))


def reg_energy(zs: Sequence[torch.Tensor], dyn: InteractionDynamics, edges_per_sample: Sequence[Sequence[Edge]]) -> torch.Tensor:
    """Time-averaged positive part of ``z^T f(z)``, summed over simulations."""
    total = torch.zeros((), dtype=torch.float64)
    for z, edges in zip(zs, edges_per_sample):
        energy = (z * torch_rhs(dyn, z, edges)).sum(dim=(1, 2))
        total = total + torch.relu(energy).mean()
    return total


def reg_frobenius(dyn: InteractionDynamics) -> torch.Tensor:
    total = (dyn.xi_internal**2).sum()
    for block in dyn.xi_dir.values():
        total = total + (block**2).sum()
    return total


def resolve_reg_kind(config: TrainConfig, library: FeatureLibrary) -> str:
    if config.reg_kind is not None:
        return config.reg_kind
    return "eigen" if library.is_linear else "energy"


# ---------------------------------------------------------------------------
# Objective and loop
# ---------------------------------------------------------------------------

@dataclass
class LossParts:
    total: torch.Tensor
    ae: torch.Tensor
    ld: torch.Tensor
    reg: torch.Tensor


def total_loss(
    autoencoders: Dict[int, Autoencoder],
    dyn: InteractionDynamics,
    training_set: TrainingSet,
    config: TrainConfig,
    noise: Optional[Sequence[torch.Tensor]] = None,
    zs: Optional[Sequence[torch.Tensor]] = None,
) -> LossParts:
    if zs is None:
        zs = [encode_sample(autoencoders, s) for s in training_set.samples]
    j_ae = loss_ae(autoencoders, training_set, noise, zs)
    j_ld = loss_ld(zs, dyn, training_set)
    j_reg = torch.zeros((), dtype=torch.float64)
    kind = resolve_reg_kind(config, dyn.library)
    if config.alpha_reg > 0 and kind != "none":
        if kind == "eigen":
            for sample in training_set.samples:
                operator = dense_operator(dyn, sample.edges, sample.n_elements)
                j_reg = j_reg + reg_eigen(operator, config.eigen_condition_limit)
        elif kind == "energy":
            j_reg = reg_energy(zs, dyn, [s.edges for s in training_set.samples])
        else:
            j_reg = reg_frobenius(dyn)
    total = config.alpha_ae * j_ae + config.alpha_ld * j_ld + config.alpha_reg * j_reg
    return LossParts(total=total, ae=j_ae, ld=j_ld, reg=j_reg)


def build_models(
    local_sizes: Dict[int, int],
    ae_config: AutoencoderConfig,
    library_kind: str,
    formulation: str,
    seed: int,
) -> Tuple[Dict[int, Autoencoder], InteractionDynamics]:
    autoencoders = {
        type_id: Autoencoder.build(
            n_local=n_local,
            hidden_sizes=ae_config.hidden_sizes,
            latent_dim=ae_config.latent_dim,
            activation=ae_config.activation,
            seed=seed + 2 * type_id,
            type_id=type_id,
        )
        for type_id, n_local in sorted(local_sizes.items())
    }
    dyn = InteractionDynamics(FeatureLibrary(library_kind, ae_config.latent_dim), formulation)
    return autoencoders, dyn


@dataclass
class TrainingResult:
    autoencoders: Dict[int, Autoencoder]
    dynamics: InteractionDynamics
    history: TrainingHistory
    optimizer_used: str
    reg_kind: str
    seconds: float = 0.0
    deviations: List[str] = field(default_factory=list)


def _check_gradients(parameters: Sequence[torch.Tensor], epoch: int) -> None:
    for p in parameters:
        if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
            raise TrainingDivergedError(epoch, "non-finite gradient")


def train(
    training_set: TrainingSet,
    config: TrainConfig,
    autoencoders: Dict[int, Autoencoder],
    dyn: InteractionDynamics,
    on_checkpoint: Optional[Callable[[int, "TrainingResult"], None]] = None,
) -> TrainingResult:
    """Full-batch minimization of the weighted objective; deterministic given the seed."""
    parameters = [p for ae in autoencoders.values() for p in ae.parameters()] + list(dyn.parameters())
    optimizer = build_optimizer(parameters, config)
    scheduler = build_scheduler(optimizer, config)
    generator = torch.Generator().manual_seed(config.seed)
    reg_kind = resolve_reg_kind(config, dyn.library)
    result = TrainingResult(
        autoencoders=autoencoders,
        dynamics=dyn,
        history=TrainingHistory(),
        optimizer_used=config.optimizer,
        reg_kind=reg_kind,
    )
    if config.optimizer == "adam":
        result.deviations.append("adam used in place of soap")
        logger.warning("optimizer_deviation", used="adam", reference="soap")

    logger.info(
        "training_started",
        simulations=len(training_set.samples),
        epochs=config.epochs,
        optimizer=config.optimizer,
        reg_kind=reg_kind,
        formulation=dyn.formulation,
        library=dyn.library.kind,
    )
    started = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        epoch_start = time.perf_counter()
        optimizer.zero_grad(set_to_none=True)
        zs = [encode_sample(autoencoders, s) for s in training_set.samples]
        noise = draw_noise(zs, dyn, training_set, config.beta, generator)
        parts = total_loss(autoencoders, dyn, training_set, config, noise, zs)
        if not torch.isfinite(parts.total):
            raise TrainingDivergedError(epoch, f"loss is {parts.total.item()}")
        parts.total.backward()
        _check_gradients(parameters, epoch)
        optimizer.step()
        if scheduler is not None:
            scheduler.step()

        record = TrainingRecord(
            epoch=epoch,
            total=parts.total.item(),
            ae=parts.ae.item(),
            ld=parts.ld.item(),
            reg=parts.reg.item(),
            seconds=time.perf_counter() - epoch_start,
        )
        result.history.append(record)
        if epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info("epoch_completed", epoch=epoch, loss=record.total, j_ae=record.ae, j_ld=record.ld, j_reg=record.reg)
            report_progress("train", 100.0 * epoch / config.epochs, epoch=epoch, loss=record.total)
        if on_checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            on_checkpoint(epoch, result)

    result.seconds = time.perf_counter() - started
    logger.info("training_completed", seconds=round(result.seconds, 3), final_loss=result.history.totals[-1])
    return result
