"""
Full-Order Solvers

Reference finite-difference solvers and initial conditions for the viscous-free
Burgers equation (implicit upwind) and the periodic KdV equation (explicit
RK4 with central stencils).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy import linalg

from app.core.exceptions import (
    NonFiniteStateError,
    SolverConvergenceError,
    ValidationError,
)
from app.models.layout import ElementLayout
from app.models.snapshot import Grid1D, KdvIcSpec, SnapshotSet
from app.services import tiling

logger = structlog.get_logger(__name__)

# Largest |z| on the imaginary axis inside the classical RK4 stability region is 2*sqrt(2).
RK4_IMAGINARY_LIMIT = 2.8
# max over wavenumbers of |2 sin(k dx) - sin(2 k dx)|
_DISPERSION_SYMBOL_MAX = 1.5 * math.sqrt(3.0)


def step_count(dt: float, t_end: float) -> int:
    if dt <= 0:
        raise ValidationError(f"time step must be positive, got {dt}", field="dt")
    if t_end < 0:
        raise ValidationError("t_end must be non-negative", field="t_end")
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValidationError(f"t_end={t_end} is not a multiple of dt={dt}", field="t_end")
    return steps


# ---------------------------------------------------------------------------
# Burgers
# ---------------------------------------------------------------------------

def burgers_ic(grid: Grid1D, amplitude: float, width: float, centers: Sequence[float]) -> np.ndarray:
    """Sum of Gaussian pulses ``A exp(-(x - c)^2 / w^2)``; no centers gives zero."""
    if width <= 0:
        raise ValidationError(f"pulse width must be positive, got {width}", field="width")
    x = grid.nodes
    field = np.zeros_like(x)
    for center in centers:
        field += amplitude * np.exp(-((x - center) ** 2) / width**2)
    return field


def _upwind_bands(q: np.ndarray, ratio: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal bands of the lagged-coefficient backward-Euler upwind operator.

    ``lower[i]`` multiplies ``q[i-1]`` and ``upper[i]`` multiplies ``q[i+1]``;
    the boundary rows are identity rows.
    """
    c = ratio * q
    positive = c > 0
    diag = 1.0 + np.abs(c)
    lower = np.where(positive, -c, 0.0)
    upper = np.where(positive, 0.0, c)
    diag[0] = diag[-1] = 1.0
    lower[0] = lower[-1] = upper[0] = upper[-1] = 0.0
    return diag, lower, upper


def _banded(diag: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return ab


def _burgers_residual(q: np.ndarray, q_prev: np.ndarray, ratio: float) -> np.ndarray:
    diag, lower, upper = _upwind_bands(q, ratio)
    applied = diag * q
    applied[1:] += lower[1:] * q[:-1]
    applied[:-1] += upper[:-1] * q[1:]
    rhs = q_prev.copy()
    rhs[0] = rhs[-1] = 0.0
    return applied - rhs


def _burgers_jacobian(q: np.ndarray, ratio: float) -> np.ndarray:
    positive = q > 0
    q_left = np.concatenate(([0.0], q[:-1]))
    q_right = np.concatenate((q[1:], [0.0]))
    diag = np.where(positive, 1.0 + ratio * (2 * q - q_left), 1.0 + ratio * (q_right - 2 * q))
    lower = np.where(positive, -ratio * q, 0.0)
    upper = np.where(positive, 0.0, ratio * q)
    diag[0] = diag[-1] = 1.0
    lower[0] = lower[-1] = upper[0] = upper[-1] = 0.0
    return _banded(diag, lower, upper)


def burgers_step(
    q_prev: np.ndarray,
    ratio: float,
    solver_tol: float = 1e-10,
    max_inner_iters: int = 50,
    method: str = "picard",
    step: int = 0,
) -> Tuple[np.ndarray, int]:
    """Advance one backward-Euler step; returns the new state and the iterations used."""
    q = q_prev.copy()
    q[0] = q[-1] = 0.0
    rhs = q_prev.copy()
    rhs[0] = rhs[-1] = 0.0
    residual = _burgers_residual(q, q_prev, ratio)
    norm = float(np.max(np.abs(residual)))

    for iteration in range(1, max_inner_iters + 1):
        if norm <= solver_tol:
            return q, iteration - 1
        if method == "newton":
            delta = linalg.solve_banded((1, 1), _burgers_jacobian(q, ratio), -residual)
            damping = 1.0
            for _ in range(9):
                trial = q + damping * delta
                trial_residual = _burgers_residual(trial, q_prev, ratio)
                trial_norm = float(np.max(np.abs(trial_residual)))
                if trial_norm < norm:
                    break
                damping *= 0.5
            q, residual, norm = trial, trial_residual, trial_norm
        else:
            q = linalg.solve_banded((1, 1), _banded(*_upwind_bands(q, ratio)), rhs)
            residual = _burgers_residual(q, q_prev, ratio)
            norm = float(np.max(np.abs(residual)))
        if not np.isfinite(norm):
            raise NonFiniteStateError(step=step, where="Burgers inner iterate")

    if norm <= solver_tol:
        return q, max_inner_iters
    raise SolverConvergenceError(step=step, residual=norm, iterations=max_inner_iters)


def burgers_solve(
    ic: np.ndarray,
    grid: Grid1D,
    dt: float,
    t_end: float,
    solver_tol: float = 1e-10,
    max_inner_iters: int = 50,
    method: str = "picard",
) -> SnapshotSet:
    """Implicit upwind solve of ``q_t + q q_x = 0`` with zero Dirichlet ends."""
    if grid.periodic:
        raise ValidationError("Burgers solver requires a non-periodic grid", field="grid")
    if method not in ("picard", "newton"):
        raise ValidationError(f"unknown inner solver '{method}'", field="method")
    q0 = np.asarray(ic, dtype=np.float64)
    if q0.shape != (grid.n_points,):
        raise ValidationError(f"IC has shape {q0.shape}, expected ({grid.n_points},)", field="ic")
    if not np.all(np.isfinite(q0)):
        raise NonFiniteStateError(step=0, where="Burgers initial condition")

    n_steps = step_count(dt, t_end)
    ratio = dt / grid.dx
    values = np.empty((grid.n_points, n_steps + 1))
    values[:, 0] = q0
    total_iterations = 0
    for k in range(1, n_steps + 1):
        values[:, k], iterations = burgers_step(
            values[:, k - 1], ratio, solver_tol, max_inner_iters, method, step=k
        )
        total_iterations += iterations

    logger.info(
        "burgers_solve_completed",
        n_points=grid.n_points,
        n_steps=n_steps,
        method=method,
        mean_inner_iterations=total_iterations / max(n_steps, 1),
    )
    return SnapshotSet.from_steps(grid, dt, values)


# ---------------------------------------------------------------------------
# KdV
# ---------------------------------------------------------------------------

def kdv_field(grid: Grid1D, spec: KdvIcSpec) -> np.ndarray:
    """``sum_k A_k 6 / cosh^2(x - x_k)`` using the periodic minimum-image distance."""
    x = grid.nodes
    field = np.zeros_like(x)
    for amplitude, center in zip(spec.amplitudes, spec.centers):
        distance = x - center
        if grid.periodic:
            distance = np.mod(distance + 0.5 * grid.length, grid.length) - 0.5 * grid.length
        field += amplitude * 6.0 / np.cosh(distance) ** 2
    return field


def kdv_ic(
    grid: Grid1D,
    layout: ElementLayout,
    seed: int,
    center_std_fraction: float = 0.1,
    max_attempts: int = 32,
) -> Tuple[np.ndarray, KdvIcSpec]:
    """Randomly switch one soliton per element on or off, centered near the element center.

    Draws that switch every soliton off are redrawn with the stream
    ``(seed, attempt)``; running out of attempts raises ``ValidationError``.
    """
    element_centers = np.array([tiling.element_center(layout, m) for m in range(layout.n_elements)])
    std = center_std_fraction * tiling.element_length(layout)
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        amplitudes = rng.integers(0, 2, size=layout.n_elements)
        centers = rng.normal(element_centers, std)
        if amplitudes.any():
            spec = KdvIcSpec(
                amplitudes=tuple(int(a) for a in amplitudes),
                centers=tuple(float(c) for c in centers),
                seed=seed,
                attempt=attempt,
            )
            if attempt:
                logger.debug("kdv_ic_resampled", seed=seed, attempts=attempt + 1)
            return kdv_field(grid, spec), spec
    raise ValidationError(
        f"No non-trivial soliton draw for seed {seed} after {max_attempts} attempts", field="seed"
    )


def kdv_rhs(q: np.ndarray, dx: float) -> np.ndarray:
    """``-6 q q_x - q_xxx`` with periodic second-order central stencils."""
    q_p1 = np.roll(q, -1)
    q_m1 = np.roll(q, 1)
    q_p2 = np.roll(q, -2)
    q_m2 = np.roll(q, 2)
    q_x = (q_p1 - q_m1) / (2.0 * dx)
    q_xxx = (q_p2 - 2.0 * q_p1 + 2.0 * q_m1 - q_m2) / (2.0 * dx**3)
    return -6.0 * q * q_x - q_xxx


@dataclass(frozen=True)
class SubstepPolicy:
    """Chooses the RK4 substep from a spectral-radius bound of the linearized stencil."""

    safety: float = 0.6
    stability_limit: float = RK4_IMAGINARY_LIMIT
    refine: int = 1

    def spectral_radius(self, q: np.ndarray, dx: float) -> float:
        advection = 6.0 * float(np.max(np.abs(q))) / dx
        dispersion = _DISPERSION_SYMBOL_MAX / dx**3
        return advection + dispersion

    def substeps(self, q: np.ndarray, dx: float, dt_snapshot: float) -> int:
        dt_max = self.safety * self.stability_limit / self.spectral_radius(q, dx)
        return max(1, math.ceil(dt_snapshot / dt_max)) * self.refine


def rk4_step(q: np.ndarray, h: float, dx: float) -> np.ndarray:
    k1 = kdv_rhs(q, dx)
    k2 = kdv_rhs(q + 0.5 * h * k1, dx)
    k3 = kdv_rhs(q + 0.5 * h * k2, dx)
    k4 = kdv_rhs(q + h * k3, dx)
    return q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def kdv_solve(
    ic: np.ndarray,
    grid: Grid1D,
    dt_snapshot: float,
    t_end: float,
    substep_policy: Optional[SubstepPolicy] = None,
) -> SnapshotSet:
    """RK4 solve of ``q_t + 6 q q_x + q_xxx = 0`` recorded every ``dt_snapshot``."""
    if not grid.periodic:
        raise ValidationError("KdV solver requires a periodic grid", field="grid")
    policy = substep_policy or SubstepPolicy()
    q = np.asarray(ic, dtype=np.float64).copy()
    if q.shape != (grid.n_points,):
        raise ValidationError(f"IC has shape {q.shape}, expected ({grid.n_points},)", field="ic")
    if not np.all(np.isfinite(q)):
        raise NonFiniteStateError(step=0, where="KdV initial condition")

    n_steps = step_count(dt_snapshot, t_end)
    dx = grid.dx
    values = np.empty((grid.n_points, n_steps + 1))
    values[:, 0] = q
    total_substeps = 0
    for k in range(1, n_steps + 1):
        n_sub = policy.substeps(q, dx, dt_snapshot)
        h = dt_snapshot / n_sub
        for _ in range(n_sub):
            q = rk4_step(q, h, dx)
        total_substeps += n_sub
        if not np.all(np.isfinite(q)):
            raise NonFiniteStateError(step=k, where="KdV state")
        values[:, k] = q

    logger.info(
        "kdv_solve_completed",
        n_points=grid.n_points,
        n_snapshots=n_steps,
        substeps_per_snapshot=total_substeps / max(n_steps, 1),
    )
    return SnapshotSet.from_steps(grid, dt_snapshot, values)
