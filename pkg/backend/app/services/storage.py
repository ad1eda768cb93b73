"""
Storage Service

Binary snapshot and model files, JSON manifests and CSV exports. All floats
are stored as little-endian float64; writes go through a temporary file and an
atomic rename.
"""

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import structlog
import torch

from app.core.error_handling import reraise_os_errors
from app.core.exceptions import FileFormatError
from app.models.layout import ElementLayout
from app.models.lsem import LsemModel
from app.models.report import TrainingHistory
from app.models.snapshot import Grid1D, SnapshotSet
from app.services.autoencoder import Autoencoder, Mlp
from app.services.latent_dynamics import FeatureLibrary, InteractionDynamics

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

SNAPSHOT_MAGIC = b"LSEMSNAP"
SNAPSHOT_VERSION = 2
SNAPSHOT_HEADER = struct.Struct("<8sIIQQdddd")
FLAG_PERIODIC = 1

MODEL_MAGIC = b"LSEMMODL"
MODEL_VERSION = 1
MODEL_PREAMBLE = struct.Struct("<8sIQ")
MODEL_HEADER_KEYS = frozenset(
    {"layout", "library", "formulation", "directions", "autoencoders", "tensors", "config", "seed",
     "optimizer_used", "meta"}
)

CSV_FORMAT = "%.17g"


def _atomic_write(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    with reraise_os_errors(str(path)):
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _read_bytes(path: PathLike) -> bytes:
    with reraise_os_errors(str(path)):
        return Path(path).read_bytes()


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def encode_snapshots(snapshots: SnapshotSet) -> bytes:
    grid = snapshots.grid
    header = SNAPSHOT_HEADER.pack(
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        FLAG_PERIODIC if grid.periodic else 0,
        grid.n_points,
        snapshots.n_times,
        grid.x_min,
        grid.x_max,
        snapshots.dt,
        float(snapshots.times[0]) if snapshots.n_times else 0.0,
    )
    # column-major: one contiguous block per time step
    payload = np.ascontiguousarray(snapshots.values.T, dtype="<f8").tobytes()
    return header + payload


def decode_snapshots(blob: bytes, source: str = "") -> SnapshotSet:
    if len(blob) < SNAPSHOT_HEADER.size:
        raise FileFormatError("truncated snapshot header", path=source)
    magic, version, flags, n_points, n_times, x_min, x_max, dt, t0 = SNAPSHOT_HEADER.unpack_from(blob)
    if magic != SNAPSHOT_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}", path=source)
    if version != SNAPSHOT_VERSION:
        raise FileFormatError(f"unsupported snapshot version {version}", path=source)
    expected = 8 * n_points * n_times
    payload = blob[SNAPSHOT_HEADER.size:]
    if len(payload) != expected:
        raise FileFormatError(f"payload has {len(payload)} bytes, expected {expected}", path=source)
    values = np.frombuffer(payload, dtype="<f8").reshape(n_times, n_points).T.astype(np.float64)
    grid = Grid1D(x_min=x_min, x_max=x_max, n_points=int(n_points), periodic=bool(flags & FLAG_PERIODIC))
    return SnapshotSet.from_steps(grid, dt, values, t0=t0)


def write_snapshots(snapshots: SnapshotSet, path: PathLike) -> Path:
    _atomic_write(path, encode_snapshots(snapshots))
    logger.debug("snapshots_written", path=str(path), shape=list(snapshots.shape))
    return Path(path)


def read_snapshots(path: PathLike) -> SnapshotSet:
    return decode_snapshots(_read_bytes(path), source=str(path))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

def _tensor_table(model: LsemModel) -> List[Tuple[str, torch.Tensor]]:
    table: List[Tuple[str, torch.Tensor]] = []
    for type_id in sorted(model.autoencoders):
        for name, param in model.autoencoders[type_id].state_dict().items():
            table.append((f"ae.{type_id}.{name}", param))
    table.append(("xi.internal", model.dynamics.xi_internal))
    for direction in model.dynamics.directions:
        table.append((f"xi.dir.{direction}", model.dynamics.xi_dir[direction]))
    return table


def encode_model(model: LsemModel) -> bytes:
    table = _tensor_table(model)
    header = {
        "version": MODEL_VERSION,
        "layout": model.layout.describe(),
        "library": {"kind": model.dynamics.library.kind, "n_z": model.dynamics.n_z},
        "formulation": model.dynamics.formulation,
        "directions": list(model.dynamics.directions),
        "autoencoders": [
            {
                "type_id": type_id,
                "encoder": list(ae.encoder.layer_sizes),
                "decoder": list(ae.decoder.layer_sizes),
                "activation": ae.activation,
            }
            for type_id, ae in sorted(model.autoencoders.items())
        ],
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in table],
        "config": model.config,
        "seed": model.seed,
        "optimizer_used": model.optimizer_used,
        "meta": model.meta,
    }
    header_bytes = canonical_json(header).encode("utf-8")
    chunks = [MODEL_PREAMBLE.pack(MODEL_MAGIC, MODEL_VERSION, len(header_bytes)), header_bytes]
    for _, tensor in table:
        chunks.append(np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_model(blob: bytes, source: str = "") -> LsemModel:
    if len(blob) < MODEL_PREAMBLE.size:
        raise FileFormatError("truncated model preamble", path=source)
    magic, version, header_len = MODEL_PREAMBLE.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}", path=source)
    if version != MODEL_VERSION:
        raise FileFormatError(f"unsupported model version {version}", path=source)
    start = MODEL_PREAMBLE.size
    if len(blob) < start + header_len:
        raise FileFormatError("truncated model header", path=source)
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"unreadable model header: {e}", path=source) from e
    missing = MODEL_HEADER_KEYS - set(header) if isinstance(header, dict) else MODEL_HEADER_KEYS
    if missing:
        raise FileFormatError(f"model header lacks {sorted(missing)}", path=source)

    offset = start + header_len
    tensors: Dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise FileFormatError(f"truncated tensor {entry['name']}", path=source)
        array = np.frombuffer(blob[offset:end], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        tensors[entry["name"]] = torch.as_tensor(array)
        offset = end
    if offset != len(blob):
        raise FileFormatError(f"{len(blob) - offset} trailing bytes after tensors", path=source)

    autoencoders: Dict[int, Autoencoder] = {}
    for spec in header["autoencoders"]:
        type_id = int(spec["type_id"])
        ae = Autoencoder(
            Mlp(spec["encoder"], spec["activation"], type_id),
            Mlp(spec["decoder"], spec["activation"], type_id),
        )
        prefix = f"ae.{type_id}."
        ae.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        autoencoders[type_id] = ae

    library = FeatureLibrary(header["library"]["kind"], int(header["library"]["n_z"]))
    dyn = InteractionDynamics(library, header["formulation"], header["directions"])
    dyn.set_blocks(
        tensors["xi.internal"].numpy(),
        {d: tensors[f"xi.dir.{d}"].numpy() for d in header["directions"]},
    )
    return LsemModel(
        autoencoders=autoencoders,
        dynamics=dyn,
        layout=ElementLayout.from_description(header["layout"]),
        config=header["config"],
        seed=int(header["seed"]),
        optimizer_used=header["optimizer_used"],
        meta=header["meta"],
    )


def save_model(model: LsemModel, path: PathLike) -> Path:
    _atomic_write(path, encode_model(model))
    logger.info("model_saved", path=str(path))
    return Path(path)


def load_model(path: PathLike) -> LsemModel:
    return decode_model(_read_bytes(path), source=str(path))


# ---------------------------------------------------------------------------
# Manifests and CSV
# ---------------------------------------------------------------------------

def write_manifest(manifest: Dict[str, Any], path: PathLike) -> Path:
    _atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return Path(path)


def read_manifest(path: PathLike) -> Dict[str, Any]:
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FileFormatError(f"unreadable manifest: {e}", path=str(path)) from e


def _write_csv(path: PathLike, header: Sequence[str], rows: np.ndarray) -> Path:
    path = Path(path)
    with reraise_os_errors(str(path)):
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.atleast_2d(rows), fmt=CSV_FORMAT, delimiter=",", header=",".join(header), comments="")
    return path


def export_snapshots_csv(snapshots: SnapshotSet, path: PathLike) -> Path:
    """Columns: ``x`` then one column per time."""
    header = ["x"] + [f"t={t:.17g}" for t in snapshots.times]
    return _write_csv(path, header, np.column_stack([snapshots.grid.nodes, snapshots.values]))


def read_snapshots_csv(path: PathLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of ``export_snapshots_csv``: (x, times, values)."""
    with reraise_os_errors(str(path)):
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.array([float(h.split("=", 1)[1]) for h in header[1:]])
    return data[:, 0], times, data[:, 1:]


def export_latent_csv(times: np.ndarray, z_global: np.ndarray, path: PathLike, prefix: str = "z") -> Path:
    """Columns: ``t`` then one column per latent coordinate."""
    header = ["t"] + [f"{prefix}{i}" for i in range(z_global.shape[0])]
    return _write_csv(path, header, np.column_stack([times, np.asarray(z_global).T]))


def export_loss_history(history: TrainingHistory, path: PathLike) -> Path:
    rows = np.array([r.as_row() for r in history.records], dtype=np.float64).reshape(-1, 5)
    return _write_csv(path, ["epoch", "J", "J_AE", "J_LD", "J_reg"], rows)


def export_table(rows: Sequence[Sequence[float]], header: Sequence[str], path: PathLike) -> Path:
    return _write_csv(path, header, np.asarray(rows, dtype=np.float64).reshape(-1, len(header)))
