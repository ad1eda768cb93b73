"""
Shared plumbing for pipeline stages: output locations and run manifests.
"""

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.core.config import ExperimentConfig, Settings, config_hash, get_settings
from app.services import storage

SNAPSHOT_SUFFIX = ".lsnap"
DATA_MANIFEST = "manifest.json"


@dataclass(frozen=True)
class RunPaths:
    data_dir: Path
    model_path: Path
    loss_history: Path
    reports_dir: Path

    @classmethod
    def from_config(
        cls,
        config: ExperimentConfig,
        settings: Optional[Settings] = None,
        model: Optional[str] = None,
        data: Optional[str] = None,
        output: Optional[str] = None,
    ) -> "RunPaths":
        """Resolve configured paths under OUTPUT_ROOT; CLI flags take precedence."""
        settings = settings or get_settings()
        out = config.output
        return cls(
            data_dir=Path(data) if data else settings.resolve(out.data_dir),
            model_path=Path(model) if model else settings.resolve(out.model_path),
            loss_history=settings.resolve(out.loss_history),
            reports_dir=Path(output) if output else settings.resolve(out.reports_dir),
        )

    @property
    def data_manifest(self) -> Path:
        return self.data_dir / DATA_MANIFEST

    @property
    def checkpoint_path(self) -> Path:
        return self.model_path.with_name(self.model_path.name + ".checkpoint")


def run_manifest(
    command: str,
    config: ExperimentConfig,
    files: List[Path],
    seeds: Dict[str, int],
    deviations: Optional[List[str]] = None,
    **extra: Any,
) -> Dict[str, Any]:
    return {
        "command": command,
        "problem": config.problem,
        "config_hash": config_hash(config),
        "created_at": datetime.now(timezone.utc).isoformat(),
        "seeds": seeds,
        "files": [str(f) for f in files],
        "deviations": list(deviations or []),
        **extra,
    }


def write_run_manifest(path: Path, manifest: Dict[str, Any]) -> Path:
    return storage.write_manifest(manifest, path)
