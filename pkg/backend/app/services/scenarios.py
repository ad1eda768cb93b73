"""
Scenario Service

Training datasets and evaluation scenarios for both problems: the layout,
the initial condition and the full-order reference for each.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import structlog

from app.core.config import ExperimentConfig
from app.core.exceptions import ConfigurationError, LayoutError
from app.core.logging_config import report_progress
from app.models.layout import ElementLayout
from app.models.snapshot import Grid1D, Simulation, SnapshotSet
from app.services import fom, tiling

logger = structlog.get_logger(__name__)

SCENARIOS = ("reproductive", "scale-up")


@dataclass
class Scenario:
    name: str
    layout: ElementLayout
    q0: np.ndarray
    times: np.ndarray
    fom_solver: Callable[[], SnapshotSet]
    ic: Dict[str, Any] = field(default_factory=dict)
    # only the seeds drawn from when building q0
    seeds: Dict[str, int] = field(default_factory=dict)


def grid_from_config(config: ExperimentConfig) -> Grid1D:
    g = config.grid
    return Grid1D(x_min=g.x_min, x_max=g.x_max, n_points=g.n_points, periodic=g.periodic)


def layout_from_config(config: ExperimentConfig, overlap_points: Optional[int] = None) -> ElementLayout:
    """Training layout; ``overlap_points`` overrides the configured overlap."""
    lc = config.layout
    return tiling.build_layout(
        grid_from_config(config),
        lc.n_elements,
        overlap_points if overlap_points is not None else lc.overlap_points,
        type_assignment=lc.type_assignment,
        topology=lc.topology,
        nominal_local_points=lc.nominal_local_points if overlap_points is None else None,
    )


def time_grid(config: ExperimentConfig) -> np.ndarray:
    n_steps = fom.step_count(config.time.dt, config.time.t_end)
    return config.time.dt * np.arange(n_steps + 1, dtype=np.float64)


def run_fom(config: ExperimentConfig, grid: Grid1D, q0: np.ndarray) -> SnapshotSet:
    if config.problem == "burgers":
        return fom.burgers_solve(
            q0,
            grid,
            config.time.dt,
            config.time.t_end,
            solver_tol=config.solver.tol,
            max_inner_iters=config.solver.max_inner_iters,
            method=config.solver.method,
        )
    policy = fom.SubstepPolicy(safety=config.solver.substep_safety)
    return fom.kdv_solve(q0, grid, config.time.dt, config.time.t_end, substep_policy=policy)


def burgers_centers(layout: ElementLayout, hosts: Sequence[int], offset: float) -> List[float]:
    """One pulse per host element, ``offset`` to the right of the host's left interface."""
    centers = []
    for host in hosts:
        if not 0 <= host < layout.n_elements:
            raise LayoutError(f"pulse host element {host} outside 0..{layout.n_elements - 1}")
        centers.append(tiling.left_interface(layout, host) + offset)
    return centers


def _burgers_ic(config: ExperimentConfig, layout: ElementLayout, hosts: Sequence[int]):
    bc = config.burgers
    centers = burgers_centers(layout, hosts, bc.offset)
    q0 = fom.burgers_ic(layout.grid, bc.amplitude, bc.width, centers)
    ic = {"kind": "burgers", "hosts": list(hosts), "centers": centers, "amplitude": bc.amplitude, "width": bc.width}
    return q0, ic


def _kdv_ic(config: ExperimentConfig, layout: ElementLayout, seed: int):
    q0, spec = fom.kdv_ic(
        layout.grid,
        layout,
        seed,
        center_std_fraction=config.kdv.center_std_fraction,
        max_attempts=config.kdv.max_attempts,
    )
    return q0, {"kind": "kdv", **spec.to_dict()}


def kdv_dataset_seed(config: ExperimentConfig, index: int) -> int:
    return config.kdv.seed + index


def training_simulations(config: ExperimentConfig, layout: Optional[ElementLayout] = None) -> List[Simulation]:
    """Run the full-order model for every training initial condition."""
    layout = layout or layout_from_config(config)
    if config.problem == "burgers":
        plans = [(f"burgers_{i:03d}", [host]) for i, host in enumerate(config.burgers.training_hosts)]
    else:
        plans = [(f"kdv_{i:03d}", kdv_dataset_seed(config, i)) for i in range(config.kdv.count)]

    simulations = []
    for i, (name, plan) in enumerate(plans):
        if config.problem == "burgers":
            q0, ic = _burgers_ic(config, layout, plan)
        else:
            q0, ic = _kdv_ic(config, layout, plan)
        snapshots = run_fom(config, layout.grid, q0)
        simulations.append(Simulation(name=name, snapshots=snapshots, ic=ic))
        report_progress("gen-data", 100.0 * (i + 1) / len(plans), simulation=name)
    logger.info("training_data_generated", problem=config.problem, simulations=len(simulations))
    return simulations


def _nominal_scale_up_extent(config: ExperimentConfig, layout: ElementLayout, n_elements: int) -> float:
    span = config.grid.x_max - config.grid.x_min
    return config.grid.x_min + span * n_elements / layout.n_elements


def scale_up_scenario(config: ExperimentConfig, layout: Optional[ElementLayout] = None) -> Scenario:
    """More copies of the training element on a proportionally larger grid."""
    layout = layout or layout_from_config(config)
    n = config.scenarios.scale_up_elements
    scaled = tiling.scaled_layout(layout, n)
    nominal = _nominal_scale_up_extent(config, layout, n)
    if abs(scaled.grid.x_max - nominal) > scaled.grid.dx:
        logger.warning(
            "scale_up_extent_deviation",
            nominal_x_max=nominal,
            x_max=scaled.grid.x_max,
            n_points=scaled.grid.n_points,
        )

    if config.problem == "burgers":
        hosts = config.scenarios.scale_up_hosts
        if not hosts:
            raise ConfigurationError("scenarios.scale_up_hosts is empty for the Burgers scale-up")
        q0, ic = _burgers_ic(config, scaled, hosts)
        seeds = {}
    else:
        q0, ic = _kdv_ic(config, scaled, config.scenarios.scale_up_seed)
        seeds = {"scale_up": config.scenarios.scale_up_seed}
    return Scenario(
        name="scale-up",
        layout=scaled,
        q0=q0,
        times=time_grid(config),
        fom_solver=lambda: run_fom(config, scaled.grid, q0),
        ic=ic,
        seeds=seeds,
    )


def reproductive_scenario(config: ExperimentConfig, layout: Optional[ElementLayout] = None) -> Scenario:
    """Training layout with one of the training initial conditions."""
    layout = layout or layout_from_config(config)
    index = config.scenarios.reproductive_index
    if config.problem == "burgers":
        hosts = config.burgers.training_hosts
        if index >= len(hosts):
            raise ConfigurationError(f"reproductive_index {index} exceeds {len(hosts)} training pulses")
        q0, ic = _burgers_ic(config, layout, [hosts[index]])
        seeds = {}
    else:
        if index >= config.kdv.count:
            raise ConfigurationError(f"reproductive_index {index} exceeds {config.kdv.count} training datasets")
        seed = kdv_dataset_seed(config, index)
        q0, ic = _kdv_ic(config, layout, seed)
        seeds = {"kdv_dataset": seed}
    return Scenario(
        name="reproductive",
        layout=layout,
        q0=q0,
        times=time_grid(config),
        fom_solver=lambda: run_fom(config, layout.grid, q0),
        ic=ic,
        seeds=seeds,
    )


def build_scenario(config: ExperimentConfig, name: str, layout: Optional[ElementLayout] = None) -> Scenario:
    if name == "reproductive":
        return reproductive_scenario(config, layout)
    if name == "scale-up":
        return scale_up_scenario(config, layout)
    raise ConfigurationError(f"Unknown scenario '{name}'; expected one of {', '.join(SCENARIOS)}")
