"""Uniform Cartesian grids, nodal fields and time stepping.

Everything downstream works on vertex-centered data: a grid with M cells per
axis carries (M+1) nodes per axis, values stored row-major as (ny, nx) arrays
with j (the y index) outermost.  One dimensional problems are the ny == 1
degenerate case of the same layout so that the scheme code is shared.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid2D:
    """Uniform vertex grid on [x_min, x_max] x [y_min, y_max] with M cells per axis."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    M: int
    h: float
    dim: int

    @property
    def nx(self) -> int:
        return self.M + 1

    @property
    def ny(self) -> int:
        return self.M + 1 if self.dim == 2 else 1

    @property
    def shape(self) -> tuple:
        return (self.ny, self.nx)

    def x_nodes(self) -> np.ndarray:
        return self.x_min + np.arange(self.nx) * self.h

    def y_nodes(self) -> np.ndarray:
        if self.dim == 1:
            return np.zeros(1)
        return self.y_min + np.arange(self.ny) * self.h

    def meshgrid(self) -> tuple:
        """(X, Y) node coordinate arrays of shape (ny, nx)."""
        return np.meshgrid(self.x_nodes(), self.y_nodes())


def make_grid(x_min: float, x_max: float, M: int,
              y_min: float = None, y_max: float = None) -> Grid2D:
    """Build a 1D grid (no y bounds) or a square-celled 2D grid.

    The 2D extents must agree so a single spacing h serves both axes.
    """
    if M < 4:
        raise ValueError(f"M={M} is too coarse; need M >= 4")
    if not x_max > x_min:
        raise ValueError(f"empty x extent [{x_min}, {x_max}]")
    h = (x_max - x_min) / M
    if y_min is None and y_max is None:
        return Grid2D(x_min, x_max, 0.0, 0.0, M, h, dim=1)
    if y_min is None or y_max is None:
        raise ValueError("give both y bounds or neither")
    if not y_max > y_min:
        raise ValueError(f"empty y extent [{y_min}, {y_max}]")
    if abs((y_max - y_min) - (x_max - x_min)) > 1e-12 * (x_max - x_min):
        raise ValueError("x and y extents differ; cells would not be square")
    return Grid2D(x_min, x_max, y_min, y_max, M, h, dim=2)


@dataclass
class Field:
    """Nodal scalar field on a grid; values shape (ny, nx), float64."""

    grid: Grid2D
    values: np.ndarray

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def sample_field(grid: Grid2D, f) -> Field:
    """Sample f at the nodes: f(x) for dim 1 grids, f(x, y) for dim 2.

    f is expected to accept numpy arrays.  Non-finite samples are rejected.
    """
    X, Y = grid.meshgrid()
    if grid.dim == 1:
        vals = np.asarray(f(X[0]), dtype=np.float64).reshape(1, grid.nx)
    else:
        vals = np.asarray(f(X, Y), dtype=np.float64)
    vals = np.broadcast_to(vals, grid.shape).astype(np.float64)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise ValueError(f"non-finite field value at node (i={bad[1]}, j={bad[0]})")
    return Field(grid, vals.copy())


@dataclass
class VelocityField:
    """Nodal velocity components; vy is all zero on dim 1 grids."""

    grid: Grid2D
    vx: np.ndarray
    vy: np.ndarray

    @classmethod
    def from_function(cls, grid: Grid2D, fx, fy=None) -> "VelocityField":
        X, Y = grid.meshgrid()
        if grid.dim == 1:
            vx = np.broadcast_to(np.asarray(fx(X[0]), dtype=np.float64),
                                 grid.shape).astype(np.float64)
            vy = np.zeros(grid.shape)
        else:
            vx = np.broadcast_to(np.asarray(fx(X, Y), dtype=np.float64),
                                 grid.shape).astype(np.float64)
            vy = np.broadcast_to(np.asarray(fy(X, Y), dtype=np.float64),
                                 grid.shape).astype(np.float64)
        if not (np.all(np.isfinite(vx)) and np.all(np.isfinite(vy))):
            raise ValueError("non-finite velocity sample")
        return cls(grid, vx, vy)

    @classmethod
    def constant(cls, grid: Grid2D, vx: float, vy: float = 0.0) -> "VelocityField":
        return cls(grid,
                   np.full(grid.shape, float(vx)),
                   np.full(grid.shape, float(vy)))


@dataclass(frozen=True)
class TimeStepping:
    """Uniform steps tau = T / N."""

    tau: float
    T: float
    N: int

    @classmethod
    def from_final_time(cls, T: float, N: int) -> "TimeStepping":
        if N < 1:
            raise ValueError(f"need at least one step, got N={N}")
        if not T > 0:
            raise ValueError(f"final time must be positive, got T={T}")
        return cls(T / N, T, N)

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


def courant_numbers(velocity: VelocityField, tau: float, h: float) -> tuple:
    """Nodal Courant numbers (C, D) = tau * (vx, vy) / h."""
    return tau * velocity.vx / h, tau * velocity.vy / h
