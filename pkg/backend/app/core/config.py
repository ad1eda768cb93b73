"""
Application Configuration

Centralized configuration management. Process-level settings come from the
environment through Pydantic Settings; experiment definitions are Pydantic
models serialized as indented JSON.
"""

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import ConfigurationError


class Settings(BaseSettings):
    """Process settings with environment variable support (prefix ``LSEM_``)."""

    DEBUG: bool = False

    # Root directory every relative output path is resolved against
    OUTPUT_ROOT: Path = Path("outputs")

    # Logging settings
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"
    LOG_FILE: Optional[str] = None

    # Intra-op threads for torch; None leaves the library default
    TORCH_NUM_THREADS: Optional[int] = None

    model_config = SettingsConfigDict(
        env_prefix="LSEM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"LOG_LEVEL must be a standard logging level, got {v!r}")
        return level

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v not in {"json", "console"}:
            raise ValueError("LOG_FORMAT must be 'json' or 'console'")
        return v

    @field_validator("TORCH_NUM_THREADS")
    @classmethod
    def validate_threads(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("TORCH_NUM_THREADS must be positive")
        return v

    @property
    def effective_log_level(self) -> str:
        return "DEBUG" if self.DEBUG else self.LOG_LEVEL

    def resolve(self, path: str) -> Path:
        """Resolve an output path against OUTPUT_ROOT unless it is absolute."""
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.OUTPUT_ROOT / candidate


@lru_cache
def get_settings() -> Settings:
    return Settings()


settings = get_settings()


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

class _Section(BaseModel):
    """Strict, immutable config section: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Section):
    x_min: float
    x_max: float
    n_points: int = Field(ge=3)
    periodic: bool = False

    @model_validator(mode="after")
    def check_extent(self) -> "GridConfig":
        if self.x_max <= self.x_min:
            raise ValueError("grid.x_max must exceed grid.x_min")
        return self


class TimeConfig(_Section):
    dt: float = Field(gt=0)
    t_end: float = Field(gt=0)


class LayoutConfig(_Section):
    n_elements: int = Field(ge=1)
    overlap_points: int = Field(ge=2)
    topology: Literal["chain", "ring"] = "chain"
    type_assignment: Optional[List[int]] = None
    # element size quoted for the reference experiment; deviations are logged
    nominal_local_points: Optional[int] = None


class BurgersConfig(_Section):
    amplitude: float = 0.8
    width: float = Field(1.0, gt=0)
    # distance of the pulse peak from its host element's left interface
    offset: float = 0.75
    training_hosts: List[int] = [1, 2, 3]


class KdvConfig(_Section):
    count: int = Field(100, ge=0)
    seed: int = 0
    center_std_fraction: float = Field(0.1, ge=0)
    max_attempts: int = Field(32, ge=1)


class SolverConfig(_Section):
    tol: float = Field(1e-10, gt=0)
    max_inner_iters: int = Field(50, ge=1)
    method: Literal["picard", "newton"] = "picard"
    substep_safety: float = Field(0.6, gt=0, le=1)


class AutoencoderConfig(_Section):
    hidden_sizes: List[int]
    latent_dim: int = Field(ge=1)
    activation: Literal["softplus", "tanh"] = "softplus"

    @field_validator("hidden_sizes")
    @classmethod
    def validate_hidden(cls, v: List[int]) -> List[int]:
        if any(size < 1 for size in v):
            raise ValueError("hidden layer sizes must be positive")
        return v


class DynamicsConfig(_Section):
    library: Literal["linear", "linear_const", "poly2"] = "linear"


class TrainConfig(_Section):
    """Loss weights, optimizer and bookkeeping for one training run."""

    alpha_ae: float = Field(1.0, ge=0)
    alpha_ld: float = Field(1.0, ge=0)
    alpha_reg: float = Field(0.0, ge=0)
    beta: float = Field(0.1, ge=0)
    learning_rate: float = Field(3e-3, gt=0)
    lr_schedule: Literal["constant", "cosine"] = "constant"
    epochs: int = Field(2000, ge=1)
    optimizer: Literal["adam", "soap"] = "adam"
    seed: int = 0
    # None picks eigen for the linear library and energy otherwise
    reg_kind: Optional[Literal["eigen", "energy", "frobenius", "none"]] = None
    formulation: Literal["one_way", "bidirectional"] = "one_way"
    checkpoint_every: int = Field(500, ge=0)
    time_stride: int = Field(1, ge=1)
    log_every: int = Field(50, ge=1)
    eigen_condition_limit: float = Field(1e8, gt=1)
    shampoo_beta: float = Field(0.95, ge=0, lt=1)
    precondition_frequency: int = Field(10, ge=1)
    max_precond_dim: int = Field(1024, ge=1)


class ScenarioConfig(_Section):
    scale_up_elements: int = Field(ge=1)
    scale_up_hosts: List[int] = []
    scale_up_seed: int = 2024
    reproductive_index: int = Field(0, ge=0)
    benchmark_repeats: int = Field(3, ge=3)
    scaling_counts: List[int] = [4, 8, 16, 32, 64]
    scaling_horizon: int = Field(100, ge=1)
    peak_height: float = Field(1.0, gt=0)
    ablation_overlaps: List[int] = []
    ablation_epochs: int = Field(200, ge=1)


class OutputConfig(_Section):
    data_dir: str
    model_path: str
    loss_history: str
    reports_dir: str


class ExperimentConfig(_Section):
    """Complete description of one experiment; every default is explicit."""

    problem: Literal["burgers", "kdv"]
    grid: GridConfig
    time: TimeConfig
    layout: LayoutConfig
    burgers: BurgersConfig = BurgersConfig()
    kdv: KdvConfig = KdvConfig()
    solver: SolverConfig = SolverConfig()
    autoencoder: AutoencoderConfig
    dynamics: DynamicsConfig = DynamicsConfig()
    training: TrainConfig = TrainConfig()
    scenarios: ScenarioConfig
    output: OutputConfig

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        if self.problem == "kdv" and not self.grid.periodic:
            raise ValueError("the KdV solver requires a periodic grid")
        if self.problem == "burgers" and self.grid.periodic:
            raise ValueError("the Burgers solver requires a non-periodic grid")
        if self.layout.topology == "ring" and not self.grid.periodic:
            raise ValueError("ring layouts require a periodic grid")
        if self.training.reg_kind == "eigen" and self.dynamics.library != "linear":
            raise ValueError("the eigen regularizer needs the linear feature library")
        assignment = self.layout.type_assignment
        if assignment is not None and len(assignment) != self.layout.n_elements:
            raise ValueError("layout.type_assignment must name one type per element")
        return self


def default_config(problem: str = "burgers") -> ExperimentConfig:
    """Return the reference-scale default configuration for a problem."""
    if problem == "burgers":
        return ExperimentConfig(
            problem="burgers",
            grid=GridConfig(x_min=-4.0, x_max=8.0, n_points=2048, periodic=False),
            time=TimeConfig(dt=1e-3, t_end=1.0),
            # 172 shared points (L_b ~ 1.0) gives 641 points per element exactly
            layout=LayoutConfig(n_elements=4, overlap_points=172, topology="chain", nominal_local_points=639),
            autoencoder=AutoencoderConfig(hidden_sizes=[100, 30], latent_dim=5, activation="softplus"),
            dynamics=DynamicsConfig(library="linear"),
            training=TrainConfig(
                alpha_ae=1.0, alpha_ld=1.0, alpha_reg=0.0, epochs=2000, learning_rate=3e-3,
                formulation="one_way", reg_kind="eigen",
            ),
            scenarios=ScenarioConfig(scale_up_elements=12, scale_up_hosts=[1, 6, 9], peak_height=0.2),
            output=OutputConfig(
                data_dir="burgers/data",
                model_path="burgers/model.lsem",
                loss_history="burgers/loss_history.csv",
                reports_dir="burgers/reports",
            ),
        )
    if problem == "kdv":
        return ExperimentConfig(
            problem="kdv",
            grid=GridConfig(x_min=-10.0, x_max=30.0, n_points=2000, periodic=True),
            time=TimeConfig(dt=1e-3, t_end=1.0),
            layout=LayoutConfig(n_elements=4, overlap_points=100, topology="ring", nominal_local_points=600),
            kdv=KdvConfig(count=100, seed=0),
            autoencoder=AutoencoderConfig(
                hidden_sizes=[300, 100, 100, 30, 30, 10], latent_dim=7, activation="tanh"
            ),
            dynamics=DynamicsConfig(library="linear"),
            training=TrainConfig(
                alpha_ae=1.0, alpha_ld=10.0, alpha_reg=1.0, epochs=10000, learning_rate=3e-3,
                formulation="one_way", reg_kind="eigen", checkpoint_every=1000,
            ),
            scenarios=ScenarioConfig(scale_up_elements=24, scale_up_seed=2024, peak_height=1.0),
            output=OutputConfig(
                data_dir="kdv/data",
                model_path="kdv/model.lsem",
                loss_history="kdv/loss_history.csv",
                reports_dir="kdv/reports",
            ),
        )
    raise ConfigurationError(f"Unknown problem '{problem}'; expected 'burgers' or 'kdv'")


def dump_config(config: ExperimentConfig) -> str:
    return config.model_dump_json(indent=2)


def parse_config(text: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate_json(text)
    except PydanticValidationError as e:
        raise ConfigurationError(f"Invalid experiment config: {e}") from e


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
    return parse_config(text)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical (sorted, compact) JSON form."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_seed(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Override every seed in the config (training noise, init and KdV draws)."""
    return config.model_copy(
        update={
            "training": config.training.model_copy(update={"seed": seed}),
            "kdv": config.kdv.model_copy(update={"seed": seed}),
        }
    )
