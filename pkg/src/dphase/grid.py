"""Uniform Cartesian grids with masked domains, cell gradients and quadrature.

Layout: the domain is a side-``L`` box ([0,1]^n for interval/square, [0,2]^2
for the radius-1 disk) split into ``resolution`` cells per axis.  Scalar
fields live on the (resolution+1)^n lattice nodes; gradients and all
quadrature live on the active cells (for the disk, cells whose center falls
inside the circle).  The cell gradient is the forward difference from each
cell's lower corner node, so the gradient matrix and its plain transpose form
an exact adjoint pair and the 5/7-point Laplacian is recovered at p=2.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp

SHAPES = ("interval", "square", "disk")


@dataclass(frozen=True)
class GridDomain:
    """Immutable discretization of the domain; safe to share across threads."""

    dim: int
    resolution: int
    spacing: float
    shape: str
    side: float
    measure: float
    interior_mask: np.ndarray   # (n_nodes,) bool
    boundary_mask: np.ndarray   # (n_nodes,) bool
    active_cells: np.ndarray    # (n_cells_lattice,) bool, C-order over cell lattice
    node_coords: np.ndarray     # (dim, n_nodes)
    cell_centers: np.ndarray    # (dim, n_active) centers of active cells only
    grad_ops: tuple             # per-axis sparse (n_active, n_nodes) difference ops
    avg_op: sp.csr_matrix       # (n_active, n_nodes) corner-averaging, weights 2^-dim

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[1]

    @property
    def n_active(self) -> int:
        return self.cell_centers.shape[1]

    @property
    def node_shape(self) -> tuple:
        return (self.resolution + 1,) * self.dim

    @property
    def cell_shape(self) -> tuple:
        return (self.resolution,) * self.dim

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask)

    @property
    def inradius(self) -> float:
        # half the box side for interval/square, the radius for the disk
        return 0.5 * self.side

    @property
    def center(self) -> np.ndarray:
        return np.full(self.dim, 0.5 * self.side)


@dataclass(frozen=True)
class ScalarField:
    """Node-valued function on a grid (u, f, test functions)."""

    values: np.ndarray
    grid: GridDomain

    def __post_init__(self):
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("value count must match grid node count")

    @classmethod
    def zeros(cls, grid: GridDomain) -> "ScalarField":
        return cls(np.zeros(grid.n_nodes), grid)

    @classmethod
    def from_function(cls, grid: GridDomain, fn) -> "ScalarField":
        return cls(np.asarray(fn(*grid.node_coords), dtype=float), grid)

    def cell_values(self) -> np.ndarray:
        """Corner-average interpolation onto the active cells."""
        return self.grid.avg_op @ self.values

    def is_dirichlet(self, tol: float = 0.0) -> bool:
        off = ~self.grid.interior_mask
        return bool(np.all(np.abs(self.values[off]) <= tol))


@dataclass(frozen=True)
class VectorField:
    """Cell-valued vector function on a grid (gradients, flux fields)."""

    components: np.ndarray      # (dim, n_active)
    grid: GridDomain

    def __post_init__(self):
        if self.components.shape != (self.grid.dim, self.grid.n_active):
            raise ValueError("component count must be dim x active cell count")

    @classmethod
    def zeros(cls, grid: GridDomain) -> "VectorField":
        return cls(np.zeros((grid.dim, grid.n_active)), grid)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components ** 2, axis=0))


def build_grid(dim: int, resolution: int, shape: str) -> GridDomain:
    """Construct a grid over the requested domain.

    ``shape`` is one of interval (dim 1), square (dim 2 or 3; a cube for
    dim 3) and disk (dim 2 only, radius 1 inside a side-2 box).  Resolutions
    below 4 are rejected; the difference stencil degenerates there.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if resolution < 4:
        raise ValueError(f"resolution must be >= 4, got {resolution}")
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}")
    if shape == "disk" and dim != 2:
        raise ValueError("disk shape requires dim=2")
    if shape == "interval" and dim != 1:
        raise ValueError("interval shape requires dim=1")
    if shape == "square" and dim == 1:
        raise ValueError("use shape='interval' for dim=1")

    side = 2.0 if shape == "disk" else 1.0
    m = resolution
    h = side / m
    node_shape = (m + 1,) * dim
    cell_shape = (m,) * dim

    cell_idx = np.indices(cell_shape).reshape(dim, -1)
    centers_all = (cell_idx + 0.5) * h

    if shape == "disk":
        r2 = np.sum((centers_all - 0.5 * side) ** 2, axis=0)
        active = r2 <= 1.0
    else:
        active = np.ones(cell_idx.shape[1], dtype=bool)

    # Node classification via adjacent-cell counts: a node is interior iff all
    # 2^dim surrounding cells exist and are active; boundary if it touches at
    # least one active cell otherwise; exterior if it touches none.
    act_grid = active.reshape(cell_shape)
    pad = np.pad(act_grid, 1, constant_values=False)
    adj = np.zeros(node_shape, dtype=np.int8)
    for offs in product((0, 1), repeat=dim):
        sl = tuple(slice(o, o + m + 1) for o in offs)
        adj += pad[sl]
    adj = adj.reshape(-1)
    interior = adj == 2 ** dim
    boundary = (adj > 0) & ~interior

    node_idx = np.indices(node_shape).reshape(dim, -1)
    node_coords = node_idx * h

    active_flat = np.flatnonzero(active)
    n_active = active_flat.size
    corner_multi = cell_idx[:, active_flat]
    n_nodes = (m + 1) ** dim

    grad_ops = []
    rows = np.arange(n_active)
    for d in range(dim):
        lo = np.ravel_multi_index(corner_multi, node_shape)
        hi_multi = corner_multi.copy()
        hi_multi[d] += 1
        hi = np.ravel_multi_index(hi_multi, node_shape)
        data = np.concatenate([np.full(n_active, -1.0 / h), np.full(n_active, 1.0 / h)])
        ij = (np.concatenate([rows, rows]), np.concatenate([lo, hi]))
        grad_ops.append(sp.csr_matrix((data, ij), shape=(n_active, n_nodes)))

    avg_rows, avg_cols = [], []
    for offs in product((0, 1), repeat=dim):
        corner = corner_multi + np.array(offs)[:, None]
        avg_rows.append(rows)
        avg_cols.append(np.ravel_multi_index(corner, node_shape))
    avg_data = np.full(n_active * 2 ** dim, 2.0 ** -dim)
    avg_op = sp.csr_matrix(
        (avg_data, (np.concatenate(avg_rows), np.concatenate(avg_cols))),
        shape=(n_active, n_nodes),
    )

    for arr in (interior, boundary, active, node_coords):
        arr.setflags(write=False)

    return GridDomain(
        dim=dim,
        resolution=m,
        spacing=h,
        shape=shape,
        side=side,
        measure=n_active * h ** dim,
        interior_mask=interior,
        boundary_mask=boundary,
        active_cells=active,
        node_coords=node_coords,
        cell_centers=centers_all[:, active_flat],
        grad_ops=tuple(grad_ops),
        avg_op=avg_op,
    )


def gradient(u: ScalarField) -> VectorField:
    """Per-cell gradient by forward differences of the corner node values."""
    comps = np.stack([g @ u.values for g in u.grid.grad_ops])
    return VectorField(comps, u.grid)


def gradient_adjoint(f: VectorField) -> ScalarField:
    """Exact transpose of the gradient stencil: <grad u, F> = <u, grad^T F>
    with plain (unweighted) dot products on cells and nodes."""
    out = np.zeros(f.grid.n_nodes)
    for d, g in enumerate(f.grid.grad_ops):
        out += g.T @ f.components[d]
    return ScalarField(out, f.grid)


def integrate(cell_values: np.ndarray, grid: GridDomain) -> float:
    """Midpoint-rule quadrature: sum over active cells times h^dim."""
    vals = np.asarray(cell_values, dtype=float)
    if vals.shape != (grid.n_active,):
        raise ValueError("integrate expects one value per active cell")
    return float(vals.sum() * grid.spacing ** grid.dim)


def cell_average(u: ScalarField) -> np.ndarray:
    return u.cell_values()


def project_dirichlet(values: np.ndarray, grid: GridDomain) -> np.ndarray:
    """Zero out boundary and exterior node entries."""
    out = np.array(values, dtype=float)
    out[~grid.interior_mask] = 0.0
    return out
