"""
Export Worker

Convert snapshot files and JSON reports into CSV for external plotting.
"""

import math
from pathlib import Path
from typing import Any, Dict

import structlog

from app.core.error_handling import reraise_os_errors
from app.core.exceptions import FileFormatError
from app.services import storage

logger = structlog.get_logger(__name__)


def _sniff(path: Path) -> bytes:
    with reraise_os_errors(str(path)):
        with open(path, "rb") as handle:
            return handle.read(len(storage.SNAPSHOT_MAGIC))


def _scalar(value: Any) -> float:
    if value is None:
        return math.nan
    if isinstance(value, (bool, int, float)):
        return float(value)
    raise TypeError(type(value).__name__)


def export_csv(source: Path, target: Path) -> Dict[str, Any]:
    """Snapshot files become ``x, t=...`` grids; reports become one row of their scalar fields."""
    source, target = Path(source), Path(target)
    magic = _sniff(source)
    if magic == storage.SNAPSHOT_MAGIC:
        snapshots = storage.read_snapshots(source)
        storage.export_snapshots_csv(snapshots, target)
        kind = "snapshots"
    elif magic == storage.MODEL_MAGIC:
        raise FileFormatError("model files have no CSV form; export a report or snapshot file", path=str(source))
    else:
        report = storage.read_manifest(source)
        header, row = [], []
        for key in sorted(report):
            try:
                row.append(_scalar(report[key]))
            except TypeError:
                continue
            header.append(key)
        if not header:
            raise FileFormatError("report has no scalar fields", path=str(source))
        storage.export_table([row], header, target)
        kind = "report"
    logger.info("csv_exported", source=str(source), target=str(target), kind=kind)
    return {"status": "success", "kind": kind, "output": str(target)}
