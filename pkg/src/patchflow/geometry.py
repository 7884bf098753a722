"""Patch masks, boundaries, exact distance transforms and Hausdorff distance.

Boundary points are midpoints of edges between an in-cell and an out-cell.
Those midpoints, together with cell centers, are nodes of the grid refined by
two, so distances to a boundary are computed exactly on the refined grid and
read back at cell centers or at the points of another boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import kernels
from .field_grid import Grid2D, ScalarField, write_snapshot


@dataclass(frozen=True, eq=False)
class PatchMask:
    grid: Grid2D
    bits: np.ndarray = field(repr=False)
    threshold: float = 0.0
    mode: str = "greater"

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool).reshape(self.grid.shape)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self):
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class PatchBoundary:
    grid: Grid2D
    nodes: np.ndarray = field(repr=False)  # (K, 2) integer (col, row) on the refined grid
    threshold: float = 0.0
    mode: str = "greater"

    @property
    def points(self) -> np.ndarray:
        """``(K, 2)`` array of ``(x, y)`` coordinates."""
        g = self.grid
        return np.column_stack(
            [g.origin[0] + 0.5 * g.h * self.nodes[:, 0], g.origin[1] + 0.5 * g.h * self.nodes[:, 1]]
        )

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True, eq=False)
class DistanceField:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def as_field(self) -> ScalarField:
        return ScalarField(self.grid, self.values)


class EmptySeedError(ValueError):
    pass


def pressure_threshold(p: ScalarField, tol_orth: float = 1e-6) -> float:
    """Positivity threshold for ``{p > 0}``: ``max(1e-7, 10 * tol_orth * max p)``."""
    return max(1e-7, 10.0 * tol_orth * float(p.values.max()))


def extract_patch(f: ScalarField, threshold: float, mode: str = "greater") -> PatchMask:
    """``{f > threshold}`` (mode ``greater``) or ``{f >= 1 - threshold}`` (mode ``geq_one_minus``)."""
    v = f.values
    if mode == "greater":
        bits = v > threshold
    elif mode == "geq_one_minus":
        bits = v >= 1.0 - threshold
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return PatchMask(f.grid, bits, threshold, mode)


def extract_boundary(mask: PatchMask) -> PatchBoundary:
    """Midpoints of all in/out cell edges, periodic wrap included.

    Cells are scanned row by row; each contributes its right edge and then
    its top edge when the two sides differ.
    """
    b = mask.bits
    right = b != np.roll(b, -1, axis=1)
    top = b != np.roll(b, -1, axis=0)
    ny, nx = b.shape
    jj, ii = np.indices((ny, nx))
    # interleave so each cell's right edge precedes its top edge
    flags = np.stack([right, top], axis=-1).reshape(-1)
    cols = np.stack([2 * ii + 1, 2 * ii], axis=-1).reshape(-1)
    rows = np.stack([2 * jj, 2 * jj + 1], axis=-1).reshape(-1)
    nodes = np.column_stack([cols[flags], rows[flags]]).astype(np.int64)
    return PatchBoundary(mask.grid, nodes, mask.threshold, mask.mode)


def _squared_edt(seed_bits, scale):
    f = np.where(seed_bits, 0.0, np.inf)
    f = kernels.lower_envelope_rows(np.ascontiguousarray(f), scale)
    return kernels.lower_envelope_rows(np.ascontiguousarray(f.T), scale).T


def _refined_distance(boundary: PatchBoundary) -> np.ndarray:
    g = boundary.grid
    if len(boundary) == 0:
        raise EmptySeedError("distance to an empty boundary is undefined")
    seeds = np.zeros((2 * g.ny, 2 * g.nx), dtype=bool)
    seeds[boundary.nodes[:, 1], boundary.nodes[:, 0]] = True
    return np.sqrt(_squared_edt(seeds, (0.5 * g.h) ** 2))


def distance_transform(seeds, grid: Grid2D | None = None) -> DistanceField:
    """Exact periodic Euclidean distance from every cell center to the seeds.

    ``seeds`` is a :class:`PatchMask` (seed = cell center of every set cell)
    or a :class:`PatchBoundary` (seed = every boundary point).
    """
    if isinstance(seeds, PatchBoundary):
        g = seeds.grid
        d = _refined_distance(seeds)[::2, ::2]
    elif isinstance(seeds, PatchMask):
        g = seeds.grid
        if not seeds.bits.any():
            raise EmptySeedError("distance to an empty mask is undefined")
        d = np.sqrt(_squared_edt(seeds.bits, g.h**2))
    else:
        raise TypeError("seeds must be a PatchMask or PatchBoundary")
    if grid is not None and grid != g:
        raise ValueError("seed grid does not match the requested grid")
    return DistanceField(g, np.ascontiguousarray(d))


def hausdorff_distance(a: PatchBoundary, b: PatchBoundary, grid: Grid2D | None = None) -> float:
    """Symmetric Hausdorff distance between two boundaries on the same grid."""
    if len(a) == 0 or len(b) == 0:
        raise EmptySeedError("Hausdorff distance needs two non-empty boundaries")
    if a.grid != b.grid:
        raise ValueError("boundaries live on different grids")
    da = _refined_distance(a)
    db = _refined_distance(b)
    ab = db[a.nodes[:, 1], a.nodes[:, 0]].max()
    ba = da[b.nodes[:, 1], b.nodes[:, 0]].max()
    return float(max(ab, ba))


def support_radius(rho: ScalarField, center=(0.0, 0.0), theta: float = 1e-6) -> float:
    """Largest wrapped distance from ``center`` to a cell with ``rho > theta``."""
    inside = rho.values > theta
    if not inside.any():
        return 0.0
    return float(rho.grid.wrapped_distance(center)[inside].max())


def inner_offset(mask: PatchMask, s: float) -> PatchMask:
    """Cells of ``mask`` at distance at least ``s`` from its boundary."""
    if s < 0:
        raise ValueError("offset must be non-negative")
    if s == 0 or not mask.bits.any():
        return mask
    boundary = extract_boundary(mask)
    if len(boundary) == 0:  # full domain
        return mask
    d = distance_transform(boundary).values
    return PatchMask(mask.grid, mask.bits & (d >= s), mask.threshold, mask.mode)


def annulus_containment(mask: PatchMask, x0, r1: float, r2: float) -> bool:
    """True iff every mask cell inside ``B(x0, r2)`` lies outside ``B(x0, r1)``."""
    if not 0 < r1 < r2:
        raise ValueError("need 0 < r1 < r2")
    d = mask.grid.wrapped_distance(x0)
    return bool(not np.any(mask.bits & (d < r2) & (d < r1)))


def count_components(mask: PatchMask) -> int:
    """Number of 4-connected components, with periodic wrap."""
    bits = mask.bits
    cells = np.flatnonzero(bits)
    if cells.size == 0:
        return 0
    idx = np.arange(bits.size).reshape(bits.shape)
    rows, cols = [], []
    for axis in (0, 1):
        nb = np.roll(idx, -1, axis=axis).ravel()
        both = bits.ravel() & bits.ravel()[nb]
        rows.append(idx.ravel()[both])
        cols.append(nb[both])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    adj = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(bits.size, bits.size))
    _, labels = csgraph.connected_components(adj, directed=False)
    return int(np.unique(labels[cells]).size)


def write_boundary_csv(boundary: PatchBoundary, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("x,y\n")
        for x, y in boundary.points:
            fh.write(f"{x:.17g},{y:.17g}\n")


def write_distance_snapshot(dist: DistanceField, t: float, sink) -> None:
    """Distance fields reuse the pressure role tag (2) in TPF1 snapshots."""
    write_snapshot(dist.as_field(), "pressure", t, sink)


def disk_boundary_error(boundary: PatchBoundary, center, radius) -> float:
    """Largest deviation of boundary points from a circle; handy for rasterization checks."""
    pts = boundary.points
    return float(np.abs(np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) - radius).max()) if len(pts) else math.inf
