"""
Inference Worker

Prediction, evaluation, benchmarking, scaling and ablation runs of a trained
surrogate against full-order references.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import structlog

from app.core.config import ExperimentConfig, config_hash
from app.core.exceptions import ValidationError
from app.core.logging_config import report_progress
from app.core.metrics import MetricsCollector
from app.models.lsem import LsemModel
from app.models.report import PredictionReport
from app.models.snapshot import Grid1D, SnapshotSet
from app.services import evaluation, scenarios, storage
from app.workers.common import SNAPSHOT_SUFFIX, RunPaths, run_manifest, write_run_manifest
from app.workers.generation import load_training_snapshots
from app.workers.learning import fit_model

logger = structlog.get_logger(__name__)


def load_trained_model(paths: RunPaths) -> LsemModel:
    model = storage.load_model(paths.model_path).eval()
    logger.info("model_loaded", path=str(paths.model_path), **model.summary())
    return model


def _write_report(
    report: PredictionReport,
    grid: Grid1D,
    times: np.ndarray,
    paths: RunPaths,
    command: str,
    config: ExperimentConfig,
    model: LsemModel,
    files: List[Path],
    scenario_seeds: Dict[str, int],
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    stem = f"{command}_{report.scenario}"
    errors = SnapshotSet(grid=grid, times=times, values=report.pointwise_error)
    error_csv = storage.export_snapshots_csv(errors, paths.reports_dir / f"{stem}_pointwise_error.csv")
    summary = report.to_dict()
    summary_path = paths.reports_dir / f"{stem}_report.json"
    storage.write_manifest(summary, summary_path)
    files = list(files) + [error_csv, summary_path]
    manifest = run_manifest(
        command,
        config,
        files,
        {"training": model.seed, **scenario_seeds},
        deviations=model.meta.get("deviations", []),
        model_config_hash=model.meta.get("config_hash"),
        report=summary,
        **(extra or {}),
    )
    write_run_manifest(paths.reports_dir / f"{stem}_manifest.json", manifest)
    return manifest


def predict_scenario(config: ExperimentConfig, paths: RunPaths, scenario_name: str) -> Dict[str, Any]:
    """Predicted snapshot file plus the pointwise error against the full-order model."""
    try:
        model = load_trained_model(paths)
        scenario = scenarios.build_scenario(config, scenario_name, model.layout)
        report_progress("predict", 10, scenario=scenario.name, n_elements=scenario.layout.n_elements)
        pred = evaluation.predict(model, scenario.layout, scenario.q0, scenario.times)
        pred_path = storage.write_snapshots(pred, paths.reports_dir / f"predict_{scenario.name}{SNAPSHOT_SUFFIX}")
        report_progress("predict", 50, stage_detail="full_order_reference")
        truth = scenario.fom_solver()
        report = evaluation.build_report(pred, truth, scenario.name, scenario.layout.n_elements, config_hash(config))
        manifest = _write_report(
            report, pred.grid, pred.times, paths, "predict", config, model, [pred_path], scenario.seeds, {"ic": scenario.ic}
        )
        report_progress("predict", 100, relative_l2=report.relative_l2)
        return {"status": "success", "report": report, "manifest": manifest}
    except Exception as e:
        logger.error("stage_failed", stage="predict", error=str(e))
        raise


def _training_reconstruction_error(model: LsemModel, paths: RunPaths) -> Optional[float]:
    """Mean autoencoder-only error over the training datasets, when they are on disk."""
    if not paths.data_manifest.exists():
        return None
    _, _, snapshot_sets = load_training_snapshots(paths)
    if not snapshot_sets:
        return None
    errors = [evaluation.reconstruction_error(model, model.layout, s) for s in snapshot_sets]
    return float(np.mean(errors))


def evaluate_scenario(config: ExperimentConfig, paths: RunPaths, scenario_name: str) -> Dict[str, Any]:
    """Space-time and final-time errors, reconstruction error, peak counts and latent trajectories."""
    try:
        model = load_trained_model(paths)
        scenario = scenarios.build_scenario(config, scenario_name, model.layout)
        report_progress("eval", 10, scenario=scenario.name)
        truth = scenario.fom_solver()
        report_progress("eval", 40, stage_detail="surrogate")
        pred = evaluation.predict(model, scenario.layout, scenario.q0, scenario.times)

        height = config.scenarios.peak_height
        periodic = scenario.layout.grid.periodic
        pred_peaks, _ = evaluation.count_peaks(pred.values[:, -1], height, periodic)
        truth_peaks, _ = evaluation.count_peaks(truth.values[:, -1], height, periodic)
        extras: Dict[str, Any] = {
            "scenario_reconstruction_l2": evaluation.reconstruction_error(model, scenario.layout, truth),
            "peaks_predicted": pred_peaks,
            "peaks_reference": truth_peaks,
            "seam_jump_ratio": evaluation.seam_jump_ratio(pred.values[:, -1], scenario.layout),
        }
        training_recon = _training_reconstruction_error(model, paths)
        if training_recon is not None:
            extras["training_reconstruction_l2_mean"] = training_recon

        predicted_z, encoded_z = evaluation.latent_comparison(model, scenario.layout, truth)
        stem = paths.reports_dir / f"eval_{scenario.name}"
        files = [
            storage.export_latent_csv(scenario.times, predicted_z, f"{stem}_latent_predicted.csv"),
            storage.export_latent_csv(scenario.times, encoded_z, f"{stem}_latent_encoded.csv"),
        ]
        report = evaluation.build_report(
            pred, truth, scenario.name, scenario.layout.n_elements, config_hash(config), extras=extras
        )
        manifest = _write_report(
            report, pred.grid, pred.times, paths, "eval", config, model, files, scenario.seeds, {"ic": scenario.ic}
        )
        logger.info("evaluation_completed", **report.to_dict())
        report_progress("eval", 100, relative_l2=report.relative_l2)
        return {"status": "success", "report": report, "manifest": manifest}
    except Exception as e:
        logger.error("stage_failed", stage="eval", error=str(e))
        raise


def benchmark_scenario(config: ExperimentConfig, paths: RunPaths, scenario_name: str) -> Dict[str, Any]:
    """Median wall-clock of surrogate and full-order runs on one scenario."""
    try:
        model = load_trained_model(paths)
        scenario = scenarios.build_scenario(config, scenario_name, model.layout)
        metrics = MetricsCollector()
        report_progress("bench", 10, scenario=scenario.name, repeats=config.scenarios.benchmark_repeats)
        report = evaluation.benchmark(
            model,
            scenario.layout,
            scenario.q0,
            scenario.times,
            scenario.fom_solver,
            repeats=config.scenarios.benchmark_repeats,
            scenario=scenario.name,
            config_hash=config_hash(config),
            metrics=metrics,
        )
        report.extras["repeats"] = config.scenarios.benchmark_repeats
        report.extras["timings"] = metrics.get_metrics_summary()["histograms"]
        manifest = _write_report(
            report, scenario.layout.grid, scenario.times, paths, "bench", config, model, [], scenario.seeds, {"ic": scenario.ic}
        )
        report_progress("bench", 100, speedup=report.speedup)
        return {"status": "success", "report": report, "manifest": manifest}
    except Exception as e:
        logger.error("stage_failed", stage="bench", error=str(e))
        raise


def scaling_run(config: ExperimentConfig, paths: RunPaths) -> Dict[str, Any]:
    """Inference time against element count on zero initial conditions."""
    try:
        model = load_trained_model(paths)
        sc = config.scenarios
        points = evaluation.scaling_curve(
            model, sc.scaling_counts, sc.scaling_horizon, config.time.dt, repeats=sc.benchmark_repeats
        )
        rows = [(p.n_elements, p.median_seconds) for p in points]
        table = storage.export_table(rows, ["n_elements", "median_seconds"], paths.reports_dir / "scaling.csv")
        ratios = [
            b.median_seconds / a.median_seconds
            for a, b in zip(points, points[1:])
            if a.median_seconds > 0
        ]
        manifest = run_manifest(
            "scaling",
            config,
            [table],
            {"training": model.seed},
            points=[{"n_elements": n, "median_seconds": s} for n, s in rows],
            step_ratios=ratios,
            horizon=sc.scaling_horizon,
        )
        write_run_manifest(paths.reports_dir / "scaling_manifest.json", manifest)
        return {"status": "success", "points": points, "manifest": manifest}
    except Exception as e:
        logger.error("stage_failed", stage="scaling", error=str(e))
        raise


def ablation_run(
    config: ExperimentConfig,
    paths: RunPaths,
    overlaps: Optional[Sequence[int]] = None,
    betas: Optional[Sequence[float]] = None,
) -> Dict[str, Any]:
    """Retrain at each overlap width and noise gain and tabulate the reproductive error."""
    try:
        overlaps = list(overlaps or config.scenarios.ablation_overlaps or [config.layout.overlap_points])
        betas = list(betas if betas is not None else [config.training.beta])
        if not betas:
            raise ValidationError("at least one noise gain is required", field="beta")
        _, names, snapshot_sets = load_training_snapshots(paths)
        if not snapshot_sets:
            raise ValidationError("dataset manifest lists no simulations", field="data")

        reference_layout = scenarios.layout_from_config(config)
        base = scenarios.reproductive_scenario(config, reference_layout)
        truth = base.fom_solver()

        rows = []
        total = len(overlaps) * len(betas)
        for i, (overlap, beta) in enumerate((o, b) for o in overlaps for b in betas):
            layout = scenarios.layout_from_config(config, overlap_points=overlap)
            train_config = config.training.model_copy(
                update={"epochs": config.scenarios.ablation_epochs, "beta": beta, "checkpoint_every": 0}
            )
            model, result = fit_model(config, snapshot_sets, names, layout, train_config)
            pred = evaluation.predict(model.eval(), layout, base.q0, base.times)
            error = evaluation.relative_l2(pred, truth)
            rows.append((overlap, beta, error, result.history.totals[-1]))
            logger.info("ablation_point", overlap_points=overlap, beta=beta, relative_l2=error)
            report_progress("ablate-overlap", 100.0 * (i + 1) / total, overlap_points=overlap, beta=beta)

        table = storage.export_table(
            rows, ["overlap_points", "beta", "relative_l2", "final_loss"], paths.reports_dir / "ablation.csv"
        )
        manifest = run_manifest(
            "ablate-overlap",
            config,
            [table],
            {"training": config.training.seed},
            epochs=config.scenarios.ablation_epochs,
            rows=[dict(zip(["overlap_points", "beta", "relative_l2", "final_loss"], r)) for r in rows],
        )
        write_run_manifest(paths.reports_dir / "ablation_manifest.json", manifest)
        return {"status": "success", "rows": rows, "manifest": manifest}
    except Exception as e:
        logger.error("stage_failed", stage="ablate-overlap", error=str(e))
        raise


def report_json(result: Dict[str, Any]) -> str:
    """Stdout summary line for a finished stage."""
    if "report" in result:
        return json.dumps(result["report"].to_dict(), sort_keys=True, default=float)
    return json.dumps(result.get("manifest", {}), sort_keys=True, default=float)
