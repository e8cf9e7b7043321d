"""Uniform structured finite-volume mesh and cell-averaged fields.

Cells are stored row-major with x fastest: the flat index of cell (i, j)
is ``k = j*nx + i``. This ordering is part of the on-disk snapshot format
and must not change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    x0: float = 0.0
    xf: float = 1.0
    y_lo: float = -1.0
    y_hi: float = 1.0

    def validate(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError(f"cell counts must be positive, got nx={self.nx}, ny={self.ny}")
        if not self.xf > self.x0:
            raise ConfigurationError(f"inverted x bounds: [{self.x0}, {self.xf}]")
        if not self.y_hi > self.y_lo:
            raise ConfigurationError(f"inverted y bounds: [{self.y_lo}, {self.y_hi}]")

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "x0": self.x0, "xf": self.xf,
                "y_lo": self.y_lo, "y_hi": self.y_hi}

    @staticmethod
    def from_dict(d):
        return GridSpec(int(d["nx"]), int(d["ny"]), float(d["x0"]), float(d["xf"]),
                        float(d["y_lo"]), float(d["y_hi"]))


class Grid:
    """Immutable uniform Cartesian mesh over a rectangle."""

    def __init__(self, spec: GridSpec):
        spec.validate()
        self.spec = spec
        self.nx = spec.nx
        self.ny = spec.ny
        self.ncells = spec.nx * spec.ny
        self.hx = (spec.xf - spec.x0) / spec.nx
        self.hy = (spec.y_hi - spec.y_lo) / spec.ny
        self.cell_area = self.hx * self.hy
        self.xc = spec.x0 + (np.arange(spec.nx) + 0.5) * self.hx
        self.yc = spec.y_lo + (np.arange(spec.ny) + 0.5) * self.hy
        # broadcastable center coordinates, shape (ny, nx)
        self.X, self.Y = np.meshgrid(self.xc, self.yc)
        self.X.setflags(write=False)
        self.Y.setflags(write=False)
        self.xc.setflags(write=False)
        self.yc.setflags(write=False)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def domain_area(self) -> float:
        s = self.spec
        return (s.xf - s.x0) * (s.y_hi - s.y_lo)

    def coord_field(self, fn) -> "Field":
        """Field sampled at cell centers from a callable fn(x, y)."""
        return Field(self, np.asarray(fn(self.X, self.Y), dtype=float).ravel())

    def y_field(self) -> "Field":
        return Field(self, np.broadcast_to(self.yc[:, None], (self.ny, self.nx)).ravel().copy())


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


class Field:
    """Cell-averaged scalar field; values are read-only after construction."""

    def __init__(self, grid: Grid, values):
        values = np.ascontiguousarray(values, dtype=float).ravel()
        if values.size != grid.ncells:
            raise DomainError(f"field length {values.size} != cell count {grid.ncells}")
        if not np.all(np.isfinite(values)):
            raise DomainError("field contains non-finite entries")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)

    def as_2d(self) -> np.ndarray:
        """View with shape (ny, nx), indexed [j, i]."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def __add__(self, other):
        self._check(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c):
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def _check(self, other):
        if other.grid is not self.grid and other.grid.spec != self.grid.spec:
            raise DomainError("fields live on different grids")


def integrate(f: Field) -> float:
    """Midpoint-rule integral over the domain."""
    return float(f.values.sum() * f.grid.cell_area)


def _boundary_value(bc, x, y):
    if bc is None:
        return 0.0
    if callable(bc):
        return bc(x, y)
    return float(bc)


def face_gradients(f: Field, bc=None):
    """Normal gradients at the faces of every cell.

    Returns (gx, gy): gx has shape (ny, nx+1) with d/dx at the x-faces,
    gy has shape (ny+1, nx) with d/dy at the y-faces.

    bc is the Dirichlet boundary value: None for homogeneous, a scalar, or
    a callable g(x, y) evaluated at boundary-face midpoints. Boundary faces
    use the half-cell one-sided form (g - f_cell)/(h/2), second-order
    consistent with data located on the boundary.
    """
    if not (bc is None or callable(bc) or isinstance(bc, (int, float))):
        raise ConfigurationError(f"unknown boundary rule: {bc!r}")
    g = f.grid
    v = f.as_2d()
    gx = np.empty((g.ny, g.nx + 1))
    gy = np.empty((g.ny + 1, g.nx))
    gx[:, 1:-1] = (v[:, 1:] - v[:, :-1]) / g.hx
    gy[1:-1, :] = (v[1:, :] - v[:-1, :]) / g.hy
    gw = _boundary_value(bc, np.full(g.ny, g.spec.x0), g.yc)
    ge = _boundary_value(bc, np.full(g.ny, g.spec.xf), g.yc)
    gs = _boundary_value(bc, g.xc, np.full(g.nx, g.spec.y_lo))
    gn = _boundary_value(bc, g.xc, np.full(g.nx, g.spec.y_hi))
    gx[:, 0] = (v[:, 0] - gw) / (g.hx / 2)
    gx[:, -1] = (ge - v[:, -1]) / (g.hx / 2)
    gy[0, :] = (v[0, :] - gs) / (g.hy / 2)
    gy[-1, :] = (gn - v[-1, :]) / (g.hy / 2)
    return gx, gy
