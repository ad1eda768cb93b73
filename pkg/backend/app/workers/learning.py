"""
Training Worker

Fit per-type autoencoders and interaction blocks to generated snapshots, then
write the model file, the loss history and periodic checkpoints.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import structlog

from app.core.config import ExperimentConfig, TrainConfig, config_hash
from app.core.exceptions import ValidationError
from app.core.logging_config import report_progress
from app.models.layout import ElementLayout
from app.models.lsem import LsemModel
from app.models.snapshot import Grid1D, SnapshotSet
from app.services import scenarios, storage
from app.services.training import TrainingResult, TrainingSet, build_models, train
from app.workers.common import RunPaths, run_manifest, write_run_manifest
from app.workers.generation import load_training_snapshots

logger = structlog.get_logger(__name__)


def to_model(config: ExperimentConfig, layout: ElementLayout, result: TrainingResult, **meta: Any) -> LsemModel:
    return LsemModel(
        autoencoders=result.autoencoders,
        dynamics=result.dynamics,
        layout=layout,
        config=config.model_dump(mode="json"),
        seed=config.training.seed,
        optimizer_used=result.optimizer_used,
        meta={
            "config_hash": config_hash(config),
            "reg_kind": result.reg_kind,
            "deviations": list(result.deviations),
            "epochs_completed": len(result.history),
            **meta,
        },
    )


def fit_model(
    config: ExperimentConfig,
    snapshot_sets: Sequence[SnapshotSet],
    names: Sequence[str],
    layout: ElementLayout,
    train_config: Optional[TrainConfig] = None,
    on_checkpoint=None,
) -> Tuple[LsemModel, TrainingResult]:
    """Train from scratch on ``layout``; ``train_config`` overrides ``config.training``."""
    train_config = train_config or config.training
    training_set = TrainingSet.from_snapshots(snapshot_sets, layout, train_config.time_stride, names)
    autoencoders, dyn = build_models(
        training_set.local_sizes,
        config.autoencoder,
        config.dynamics.library,
        train_config.formulation,
        train_config.seed,
    )

    def checkpoint(epoch: int, partial: TrainingResult) -> None:
        if on_checkpoint is not None:
            on_checkpoint(epoch, to_model(config, layout, partial, checkpoint_epoch=epoch))

    result = train(training_set, train_config, autoencoders, dyn, on_checkpoint=checkpoint)
    model = to_model(
        config,
        layout,
        result,
        training_seconds=result.seconds,
        final_loss=result.history.totals[-1],
    )
    return model, result


def _check_grid(manifest: Dict[str, Any], layout: ElementLayout) -> None:
    if "grid" not in manifest:
        return
    if Grid1D.from_dict(manifest["grid"]) != layout.grid:
        raise ValidationError("generated data lives on a different grid than the configured layout", field="data")


def train_model(config: ExperimentConfig, paths: RunPaths) -> Dict[str, Any]:
    """
    Train on the dataset under ``paths.data_dir``.

    Args:
        config: Experiment configuration
        paths: Resolved output locations

    Returns:
        Dict with the run manifest and processing info
    """
    try:
        report_progress("train", 0, problem=config.problem)
        layout = scenarios.layout_from_config(config)
        manifest, names, snapshot_sets = load_training_snapshots(paths)
        if not snapshot_sets:
            raise ValidationError("dataset manifest lists no simulations", field="data")
        _check_grid(manifest, layout)

        def save_checkpoint(epoch: int, model: LsemModel) -> None:
            storage.save_model(model, paths.checkpoint_path)
            logger.info("checkpoint_saved", epoch=epoch, path=str(paths.checkpoint_path))

        model, result = fit_model(config, snapshot_sets, names, layout, on_checkpoint=save_checkpoint)
        storage.save_model(model, paths.model_path)
        storage.export_loss_history(result.history, paths.loss_history)

        files: List = [paths.model_path, paths.loss_history]
        run = run_manifest(
            "train",
            config,
            files,
            {"training": config.training.seed},
            deviations=result.deviations,
            data_manifest=str(paths.data_manifest),
            data_config_hash=manifest.get("config_hash"),
            optimizer_used=result.optimizer_used,
            reg_kind=result.reg_kind,
            final_loss=result.history.totals[-1],
            training_seconds=result.seconds,
        )
        write_run_manifest(paths.reports_dir / "train_manifest.json", run)
        report_progress("train", 100, final_loss=result.history.totals[-1])

        return {
            "status": "success",
            "model": model,
            "manifest": run,
            "processing_info": {
                "simulations": len(snapshot_sets),
                "epochs": len(result.history),
                "final_loss": result.history.totals[-1],
            },
        }
    except Exception as e:
        logger.error("stage_failed", stage="train", error=str(e))
        raise
