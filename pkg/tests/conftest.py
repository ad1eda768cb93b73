"""
Test configuration and utilities.
"""
from pathlib import Path
from typing import Dict

import numpy as np
import pytest
import torch

from app.core.config import (
    AutoencoderConfig,
    BurgersConfig,
    ExperimentConfig,
    GridConfig,
    KdvConfig,
    LayoutConfig,
    OutputConfig,
    ScenarioConfig,
    TimeConfig,
    TrainConfig,
)
from app.models.layout import ElementLayout
from app.models.lsem import LsemModel
from app.models.snapshot import Grid1D
from app.services import tiling
from app.services.autoencoder import Autoencoder, Mlp
from app.services.latent_dynamics import FeatureLibrary, InteractionDynamics


@pytest.fixture(autouse=True)
def frozen_seeds():
    """Every test starts from the same global RNG state."""
    np.random.seed(1234)
    torch.manual_seed(1234)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def chain_grid() -> Grid1D:
    return Grid1D(x_min=0.0, x_max=2.0, n_points=41, periodic=False)


@pytest.fixture
def ring_grid() -> Grid1D:
    return Grid1D(x_min=0.0, x_max=8.0, n_points=64, periodic=True)


@pytest.fixture
def chain_layout(chain_grid) -> ElementLayout:
    """Three elements of 17 points sharing 5 points at each junction."""
    return tiling.build_layout(chain_grid, n_elements=3, overlap_points=5)


@pytest.fixture
def ring_layout(ring_grid) -> ElementLayout:
    """Four wrapped elements of 20 points sharing 4 points at each junction."""
    return tiling.build_layout(ring_grid, n_elements=4, overlap_points=4, topology="ring")


def identity_autoencoder(n_local: int, type_id: int = 0) -> Autoencoder:
    """Encoder and decoder that copy the local field into the latent space."""
    encoder = Mlp([n_local, n_local], "softplus", type_id)
    decoder = Mlp([n_local, n_local], "softplus", type_id)
    with torch.no_grad():
        for mlp in (encoder, decoder):
            mlp.layers[0].weight.copy_(torch.eye(n_local, dtype=torch.float64))
            mlp.layers[0].bias.zero_()
    return Autoencoder(encoder, decoder)


def identity_model(layout: ElementLayout, xi_internal: np.ndarray = None) -> LsemModel:
    """Stub surrogate: identity autoencoder with optional internal dynamics and no coupling."""
    n_local = layout.elements[0].n_local
    dyn = InteractionDynamics(FeatureLibrary("linear", n_local))
    if xi_internal is not None:
        dyn.set_blocks(xi_internal, {})
    return LsemModel(autoencoders={0: identity_autoencoder(n_local)}, dynamics=dyn, layout=layout)


@pytest.fixture
def make_identity_model():
    return identity_model


def tiny_burgers_config(root: Path, **training: float) -> ExperimentConfig:
    """Burgers experiment small enough for end-to-end runs in a few seconds."""
    train_options: Dict = dict(epochs=3, log_every=1, checkpoint_every=2, learning_rate=1e-3, seed=7)
    train_options.update(training)
    return ExperimentConfig(
        problem="burgers",
        grid=GridConfig(x_min=-1.0, x_max=3.0, n_points=81, periodic=False),
        time=TimeConfig(dt=0.01, t_end=0.05),
        layout=LayoutConfig(n_elements=2, overlap_points=5, topology="chain"),
        burgers=BurgersConfig(amplitude=0.8, width=0.3, offset=0.5, training_hosts=[0, 1]),
        autoencoder=AutoencoderConfig(hidden_sizes=[8], latent_dim=2, activation="softplus"),
        training=TrainConfig(**train_options),
        scenarios=ScenarioConfig(
            scale_up_elements=3,
            scale_up_hosts=[0, 2],
            scaling_counts=[1, 2],
            scaling_horizon=3,
            peak_height=0.1,
            ablation_overlaps=[5, 7],
            ablation_epochs=2,
        ),
        output=OutputConfig(
            data_dir=str(root / "data"),
            model_path=str(root / "model.lsem"),
            loss_history=str(root / "loss_history.csv"),
            reports_dir=str(root / "reports"),
        ),
    )


def tiny_kdv_config(root: Path, count: int = 2) -> ExperimentConfig:
    return ExperimentConfig(
        problem="kdv",
        grid=GridConfig(x_min=-10.0, x_max=10.0, n_points=100, periodic=True),
        time=TimeConfig(dt=0.01, t_end=0.02),
        layout=LayoutConfig(n_elements=2, overlap_points=10, topology="ring"),
        kdv=KdvConfig(count=count, seed=3),
        autoencoder=AutoencoderConfig(hidden_sizes=[8], latent_dim=2, activation="tanh"),
        training=TrainConfig(epochs=2, log_every=1, checkpoint_every=0),
        scenarios=ScenarioConfig(scale_up_elements=3),
        output=OutputConfig(
            data_dir=str(root / "data"),
            model_path=str(root / "model.lsem"),
            loss_history=str(root / "loss_history.csv"),
            reports_dir=str(root / "reports"),
        ),
    )


@pytest.fixture
def burgers_config(tmp_path) -> ExperimentConfig:
    return tiny_burgers_config(tmp_path)


@pytest.fixture
def kdv_config(tmp_path) -> ExperimentConfig:
    return tiny_kdv_config(tmp_path)
