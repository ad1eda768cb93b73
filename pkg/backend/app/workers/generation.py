"""
Data Generation Worker

Run the full-order model for every training initial condition and store the
snapshots with a manifest of seeds and IC specifications.
"""

from typing import Any, Dict, Optional

import structlog

from app.core.config import ExperimentConfig
from app.core.logging_config import report_progress
from app.services import scenarios, storage
from app.workers.common import SNAPSHOT_SUFFIX, RunPaths, run_manifest, write_run_manifest

logger = structlog.get_logger(__name__)


def generate_data(config: ExperimentConfig, paths: RunPaths) -> Dict[str, Any]:
    """
    Generate training snapshots.

    Args:
        config: Experiment configuration
        paths: Resolved output locations

    Returns:
        Dict with the manifest and processing info
    """
    try:
        report_progress("gen-data", 0, problem=config.problem)
        layout = scenarios.layout_from_config(config)
        simulations = scenarios.training_simulations(config, layout)

        files = []
        entries = []
        for sim in simulations:
            path = paths.data_dir / f"{sim.name}{SNAPSHOT_SUFFIX}"
            storage.write_snapshots(sim.snapshots, path)
            files.append(path)
            entries.append({"name": sim.name, "file": path.name, "ic": sim.ic, "shape": list(sim.snapshots.shape)})

        seeds = {"kdv": config.kdv.seed} if config.problem == "kdv" else {}
        manifest = run_manifest(
            "gen-data",
            config,
            files,
            seeds,
            grid=layout.grid.to_dict(),
            dt=config.time.dt,
            simulations=entries,
        )
        write_run_manifest(paths.data_manifest, manifest)
        report_progress("gen-data", 100, simulations=len(entries))

        return {
            "status": "success",
            "manifest": manifest,
            "processing_info": {"simulations": len(entries), "data_dir": str(paths.data_dir)},
        }
    except Exception as e:
        logger.error("stage_failed", stage="gen-data", error=str(e))
        raise


def load_training_snapshots(paths: RunPaths, manifest: Optional[Dict[str, Any]] = None):
    """(manifest, names, snapshot sets) of a generated dataset."""
    manifest = manifest or storage.read_manifest(paths.data_manifest)
    entries = manifest.get("simulations", [])
    names = [e["name"] for e in entries]
    snapshot_sets = [storage.read_snapshots(paths.data_dir / e["file"]) for e in entries]
    return manifest, names, snapshot_sets
