"""Uniform periodic 2-D grids, scalar fields on them, and TPF1 snapshot I/O.

Fields store their samples as a ``(ny, nx)`` array, so ``values[j, i]`` is
the cell whose center sits at ``origin + (i*h, j*h)``.  Flattening in C order
gives the row-major layout used by snapshots (``i`` varies fastest).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

EPS_CLIP = 1e-9

ROLE_DENSITY = 0
ROLE_NUTRIENT = 1
ROLE_PRESSURE = 2
ROLES = {"density": ROLE_DENSITY, "nutrient": ROLE_NUTRIENT, "pressure": ROLE_PRESSURE}

MAGIC = b"TPF1"
_HEADER = struct.Struct("<4sIIddB")
HEADER_SIZE = _HEADER.size  # 29 bytes: magic, nx, ny, h, t, role


class SnapshotError(ValueError):
    """Base class for unreadable snapshot data."""


class BadMagicError(SnapshotError):
    pass


class TruncatedSnapshotError(SnapshotError):
    pass


class NonFiniteSnapshotError(SnapshotError):
    pass


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)
    periodic: bool = True

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid needs at least 8 cells per axis, got {self.nx}x{self.ny}")
        if not self.h > 0:
            raise ValueError(f"cell width must be positive, got {self.h}")
        if not self.periodic:
            raise ValueError("only periodic grids are supported")

    @classmethod
    def box(cls, n: int, half_width: float = 1.0) -> "Grid2D":
        """Square ``n x n`` grid covering ``[-half_width, half_width]^2``.

        Cell centers are offset by ``h/2`` from the box edges, which keeps
        shapes centered at the origin symmetric under the grid's reflections.
        """
        h = 2.0 * half_width / n
        lo = -half_width + 0.5 * h
        return cls(n, n, h, (lo, lo))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def lx(self) -> float:
        return self.nx * self.h

    @property
    def ly(self) -> float:
        return self.ny * self.h

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + self.h * np.arange(self.nx)
        y = self.origin[1] + self.h * np.arange(self.ny)
        return x, y

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="xy")

    def wrapped_offsets(self, center=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell displacement from ``center`` reduced to the periodic cell."""
        X, Y = self.coords()
        dx = X - center[0]
        dy = Y - center[1]
        dx -= self.lx * np.round(dx / self.lx)
        dy -= self.ly * np.round(dy / self.ly)
        return dx, dy

    def wrapped_distance(self, center=(0.0, 0.0)) -> np.ndarray:
        dx, dy = self.wrapped_offsets(center)
        return np.hypot(dx, dy)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            if v.size != self.grid.nx * self.grid.ny:
                raise ValueError(f"expected {self.grid.shape} values, got shape {v.shape}")
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = np.array(v, dtype=np.float64, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid2D, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


def clamp_density(f: ScalarField) -> ScalarField:
    """Clamp a density to [0, 1] after checking it is within ``EPS_CLIP``."""
    v = f.values
    lo, hi = v.min(), v.max()
    if lo < -EPS_CLIP or hi > 1.0 + EPS_CLIP:
        raise ValueError(f"density outside [0, 1] beyond clip tolerance: [{lo}, {hi}]")
    return f.with_values(np.clip(v, 0.0, 1.0))


def integrate(f: ScalarField) -> float:
    return float(f.grid.cell_area * np.sum(f.values))


def lp_norm(f: ScalarField, p=2) -> float:
    v = np.abs(f.values)
    if p in (np.inf, "inf"):
        return float(v.max())
    if p == 1:
        return float(f.grid.cell_area * v.sum())
    if p == 2:
        return float(np.sqrt(f.grid.cell_area * np.sum(v * v)))
    raise ValueError(f"unsupported norm order {p!r}")


def gradient(f: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Centered differences with periodic wrap."""
    v = f.values
    inv = 1.0 / (2.0 * f.grid.h)
    gx = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) * inv
    gy = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) * inv
    return f.with_values(gx), f.with_values(gy)


def total_variation(f: ScalarField) -> float:
    """Anisotropic TV: ``h * sum |forward differences|`` over both axes."""
    v = f.values
    dx = np.abs(np.roll(v, -1, axis=1) - v).sum()
    dy = np.abs(np.roll(v, -1, axis=0) - v).sum()
    return float(f.grid.h * (dx + dy))


def write_snapshot(f: ScalarField, role, t: float, sink: BinaryIO) -> None:
    tag = ROLES[role] if isinstance(role, str) else int(role)
    if tag not in ROLES.values():
        raise ValueError(f"unknown field role {role!r}")
    g = f.grid
    sink.write(_HEADER.pack(MAGIC, g.nx, g.ny, g.h, float(t), tag))
    sink.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(source: BinaryIO, origin=None) -> tuple[ScalarField, int, float]:
    """Read one TPF1 snapshot; returns ``(field, role_tag, t)``.

    The header does not carry the grid origin.  When ``origin`` is omitted
    the box is assumed centered at zero, as produced by :meth:`Grid2D.box`.
    """
    head = source.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise TruncatedSnapshotError(f"header is {len(head)} bytes, expected {HEADER_SIZE}")
    magic, nx, ny, h, t, tag = _HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    nbytes = nx * ny * 8
    payload = source.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedSnapshotError(f"payload is {len(payload)} bytes, expected {nbytes}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(ny, nx)
    if not np.all(np.isfinite(values)):
        raise NonFiniteSnapshotError("payload contains NaN or Inf")
    if origin is None:
        origin = (-0.5 * nx * h + 0.5 * h, -0.5 * ny * h + 0.5 * h)
    return ScalarField(Grid2D(nx, ny, h, tuple(origin)), values), tag, t
