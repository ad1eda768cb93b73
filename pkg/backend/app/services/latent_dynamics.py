"""
Latent Dynamics Service

Feature libraries, the internal and directional coefficient blocks that couple
neighbouring elements, assembly of the global block operator and latent time
integration.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
import torch
from scipy import linalg, sparse
from torch import nn

from app.core.exceptions import NonFiniteStateError, SpectrumError, ValidationError
from app.core.validation import ArrayValidator
from app.models.layout import DIRECTIONS, OPPOSITE, Edge, ElementLayout

logger = structlog.get_logger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor]

LIBRARY_KINDS = ("linear", "linear_const", "poly2")
FORMULATIONS = ("one_way", "bidirectional")


@dataclass(frozen=True)
class FeatureLibrary:
    """Candidate functions of one element's latent state."""

    kind: str
    n_z: int

    def __post_init__(self):
        if self.kind not in LIBRARY_KINDS:
            raise ValidationError(f"Unknown feature library '{self.kind}'", field="kind")
        if self.n_z < 1:
            raise ValidationError("n_z must be positive", field="n_z")

    @property
    def m_features(self) -> int:
        if self.kind == "linear":
            return self.n_z
        if self.kind == "linear_const":
            return self.n_z + 1
        return 1 + self.n_z + self.n_z * (self.n_z + 1) // 2

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    def evaluate(self, z: ArrayLike) -> ArrayLike:
        """Features along the trailing axis; accepts numpy arrays or tensors."""
        if z.shape[-1] != self.n_z:
            raise ValidationError(f"latent vector has size {z.shape[-1]}, expected {self.n_z}", field="z")
        if self.kind == "linear":
            return z
        if isinstance(z, torch.Tensor):
            ones = torch.ones(z.shape[:-1] + (1,), dtype=z.dtype)
            cat = torch.cat
        else:
            z = np.asarray(z, dtype=np.float64)
            ones = np.ones(z.shape[:-1] + (1,))
            cat = np.concatenate
        if self.kind == "linear_const":
            return cat([ones, z], -1)
        rows, cols = np.triu_indices(self.n_z)
        if isinstance(z, torch.Tensor):
            rows, cols = torch.as_tensor(rows), torch.as_tensor(cols)
        quadratic = z[..., rows] * z[..., cols]
        return cat([ones, z, quadratic], -1)


def eval_features(library: FeatureLibrary, z: ArrayLike) -> ArrayLike:
    return library.evaluate(z)


class InteractionDynamics(nn.Module):
    """Internal block plus one coefficient block per neighbour direction."""

    def __init__(
        self,
        library: FeatureLibrary,
        formulation: str = "one_way",
        directions: Sequence[str] = ("l", "r"),
    ):
        super().__init__()
        if formulation not in FORMULATIONS:
            raise ValidationError(f"Unknown formulation '{formulation}'", field="formulation")
        unknown = set(directions) - set(DIRECTIONS)
        if unknown:
            raise ValidationError(f"Unknown direction labels {sorted(unknown)}", field="directions")
        self.library = library
        self.formulation = formulation
        shape = (library.n_z, library.m_features)
        self.xi_internal = nn.Parameter(torch.zeros(shape, dtype=torch.float64))
        self.xi_dir = nn.ParameterDict(
            {d: nn.Parameter(torch.zeros(shape, dtype=torch.float64)) for d in directions}
        )

    @property
    def n_z(self) -> int:
        return self.library.n_z

    @property
    def m_features(self) -> int:
        return self.library.m_features

    @property
    def directions(self) -> Tuple[str, ...]:
        return tuple(self.xi_dir.keys())

    def block(self, direction: str) -> nn.Parameter:
        if direction not in self.xi_dir:
            raise ValidationError(f"No coefficient block for direction '{direction}'", field="xi_dir")
        return self.xi_dir[direction]

    def set_blocks(self, xi_internal: np.ndarray, xi_dir: Mapping[str, np.ndarray]) -> "InteractionDynamics":
        shape = (self.n_z, self.m_features)
        with torch.no_grad():
            ArrayValidator.require_same_shape(np.asarray(xi_internal), np.zeros(shape), "xi_internal")
            self.xi_internal.copy_(torch.as_tensor(np.asarray(xi_internal, dtype=np.float64)))
            for direction, block in xi_dir.items():
                ArrayValidator.require_same_shape(np.asarray(block), np.zeros(shape), f"xi_{direction}")
                self.block(direction).copy_(torch.as_tensor(np.asarray(block, dtype=np.float64)))
        return self

    def numpy_blocks(self) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        return (
            self.xi_internal.detach().numpy().copy(),
            {d: p.detach().numpy().copy() for d, p in self.xi_dir.items()},
        )


@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """Assembled block operator for one element adjacency."""

    n_elements: int
    n_z: int
    m_features: int
    edges: Tuple[Edge, ...]
    formulation: str
    operator: sparse.bsr_matrix

    @property
    def shape(self) -> Tuple[int, int]:
        return self.operator.shape

    def dense(self) -> np.ndarray:
        return self.operator.toarray()


def _edges_of(adjacency: Union[ElementLayout, Sequence[Edge]], n_elements: Optional[int]) -> Tuple[List[Edge], int]:
    if isinstance(adjacency, ElementLayout):
        return adjacency.edges(), adjacency.n_elements
    edges = list(adjacency)
    if n_elements is None:
        n_elements = 1 + max((max(e.source, e.target) for e in edges), default=0)
    return edges, n_elements


def _block_map(dyn: InteractionDynamics, edges: Sequence[Edge], n_elements: int, as_tensor: bool) -> Dict[Tuple[int, int], object]:
    """(row element, column element) -> coefficient block."""

    def get(p):
        return p if as_tensor else p.detach().numpy()

    blocks: Dict[Tuple[int, int], object] = {}

    def add(key, value):
        blocks[key] = blocks[key] + value if key in blocks else value

    for e in range(n_elements):
        add((e, e), get(dyn.xi_internal))
    for edge in edges:
        add((edge.target, edge.source), get(dyn.block(edge.direction)))
        if dyn.formulation == "bidirectional":
            add((edge.target, edge.target), get(dyn.block(OPPOSITE[edge.direction])))
    return blocks


def assemble_global(
    dyn: InteractionDynamics,
    adjacency: Union[ElementLayout, Sequence[Edge]],
    n_elements: Optional[int] = None,
) -> GlobalSystem:
    """Block-sparse operator: internal blocks on the diagonal, one block per coupling edge."""
    edges, n = _edges_of(adjacency, n_elements)
    blocks = _block_map(dyn, edges, n, as_tensor=False)
    keys = sorted(blocks)
    data = np.stack([np.asarray(blocks[k], dtype=np.float64) for k in keys])
    indices = np.array([col for _, col in keys], dtype=np.int64)
    indptr = np.searchsorted([row for row, _ in keys], np.arange(n + 1), side="left")
    operator = sparse.bsr_matrix(
        (data, indices, indptr),
        shape=(n * dyn.n_z, n * dyn.m_features),
        blocksize=(dyn.n_z, dyn.m_features),
    )
    return GlobalSystem(
        n_elements=n,
        n_z=dyn.n_z,
        m_features=dyn.m_features,
        edges=tuple(edges),
        formulation=dyn.formulation,
        operator=operator,
    )


def stacked_features(library: FeatureLibrary, z_global: np.ndarray, n_elements: int) -> np.ndarray:
    """Per-element features stacked in element order; columns are kept for 2-D input."""
    z_global = np.asarray(z_global, dtype=np.float64)
    if z_global.shape[0] != n_elements * library.n_z:
        raise ValidationError(
            f"global latent has {z_global.shape[0]} rows, expected {n_elements * library.n_z}",
            field="z_global",
        )
    if z_global.ndim == 1:
        return library.evaluate(z_global.reshape(n_elements, library.n_z)).reshape(-1)
    cols = z_global.shape[1]
    per_element = z_global.reshape(n_elements, library.n_z, cols).transpose(2, 0, 1)
    features = library.evaluate(per_element)
    return features.reshape(cols, -1).T


def global_rhs(system: GlobalSystem, dyn: InteractionDynamics, z_global: np.ndarray) -> np.ndarray:
    return system.operator @ stacked_features(dyn.library, z_global, system.n_elements)


def rk4(f: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Classical RK4; returns the trajectory with ``y0`` as the first column."""
    y = np.asarray(y0, dtype=np.float64).copy()
    out = np.empty((y.size, n_steps + 1))
    out[:, 0] = y
    for k in range(1, n_steps + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(step=k, where="latent state")
        out[:, k] = y
    return out


def integrate_latent(
    system: GlobalSystem,
    dyn: InteractionDynamics,
    z0: np.ndarray,
    times: np.ndarray,
) -> np.ndarray:
    """RK4 at the snapshot step; shape ``(n_elements * n_z, len(times))``."""
    times = np.asarray(times, dtype=np.float64)
    z0 = np.asarray(z0, dtype=np.float64).reshape(-1)
    if z0.size != system.n_elements * system.n_z:
        raise ValidationError(f"z0 has {z0.size} entries, expected {system.n_elements * system.n_z}", field="z0")
    if times.size == 1:
        return z0.reshape(-1, 1).copy()
    dt = ArrayValidator.require_uniform(times, "times")
    library = dyn.library
    operator = system.operator
    n = system.n_elements

    def rhs(z: np.ndarray) -> np.ndarray:
        return operator @ library.evaluate(z.reshape(n, library.n_z)).reshape(-1)

    return rk4(rhs, z0, dt, times.size - 1)


def spectrum(operator: Union[GlobalSystem, np.ndarray, sparse.spmatrix]) -> np.ndarray:
    """Eigenvalues of a square linear latent operator, sorted by real then imaginary part."""
    if isinstance(operator, GlobalSystem):
        matrix = operator.dense()
    elif sparse.issparse(operator):
        matrix = operator.toarray()
    else:
        matrix = np.asarray(operator, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(
            f"spectrum needs a square operator (linear library), got {matrix.shape}", field="operator"
        )
    try:
        eigenvalues = linalg.eigvals(matrix)
    except (linalg.LinAlgError, ValueError) as e:
        raise SpectrumError(f"Eigenvalue computation failed: {e}") from e
    return eigenvalues[np.lexsort((eigenvalues.imag, eigenvalues.real))]


# ---------------------------------------------------------------------------
# Differentiable forms used during training
# ---------------------------------------------------------------------------

def torch_rhs(dyn: InteractionDynamics, z: torch.Tensor, edges: Sequence[Edge]) -> torch.Tensor:
    """Latent derivative for ``z`` of shape ``(..., n_elements, n_z)``."""
    phi = dyn.library.evaluate(z)
    out = phi @ dyn.xi_internal.T
    dim = out.dim() - 2
    by_direction: Dict[str, List[Edge]] = {}
    for edge in edges:
        by_direction.setdefault(edge.direction, []).append(edge)
    for direction, group in by_direction.items():
        sources = torch.tensor([e.source for e in group], dtype=torch.long)
        targets = torch.tensor([e.target for e in group], dtype=torch.long)
        coupling = phi.index_select(dim, sources) @ dyn.block(direction).T
        out = out.index_add(dim, targets, coupling)
        if dyn.formulation == "bidirectional":
            own = phi.index_select(dim, targets) @ dyn.block(OPPOSITE[direction]).T
            out = out.index_add(dim, targets, own)
    return out


def dense_operator(dyn: InteractionDynamics, edges: Sequence[Edge], n_elements: int) -> torch.Tensor:
    """Differentiable dense version of the assembled operator."""
    blocks = _block_map(dyn, edges, n_elements, as_tensor=True)
    zero = torch.zeros((dyn.n_z, dyn.m_features), dtype=torch.float64)
    rows = [
        torch.cat([blocks.get((r, c), zero) for c in range(n_elements)], dim=1)
        for r in range(n_elements)
    ]
    return torch.cat(rows, dim=0)
