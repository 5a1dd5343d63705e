"""Cell-centered rectangular grids and scalar fields defined on them.

A domain is the rectangle ``[a, b] x [c, d]`` stored as the tuple
``(a, b, c, d)``.  An ``nx x ny`` grid divides it into cells of size
``h_x = (b - a) / nx`` by ``h_y = (d - c) / ny`` whose centers are
``x_i = a + (i + 1/2) h_x`` and ``y_j = c + (j + 1/2) h_y``.  Field values
are stored as an ``(nx, ny)`` array, so ``values[i, j]`` lives at
``(x_i, y_j)`` and the flattened (row-major) index is ``i * ny + j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Domain = tuple[float, float, float, float]


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry without values: cell counts and domain rectangle."""

    nx: int
    ny: int
    domain: Domain

    def __post_init__(self):
        a, b, c, d = self.domain
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have at least one cell, got {self.nx}x{self.ny}")
        if not (b > a and d > c):
            raise ValueError(f"degenerate domain {self.domain}")
        object.__setattr__(self, "domain", (float(a), float(b), float(c), float(d)))

    @property
    def hx(self) -> float:
        a, b, _, _ = self.domain
        return (b - a) / self.nx

    @property
    def hy(self) -> float:
        _, _, c, d = self.domain
        return (d - c) / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def x_centers(self) -> np.ndarray:
        a = self.domain[0]
        return a + (np.arange(self.nx) + 0.5) * self.hx

    def y_centers(self) -> np.ndarray:
        c = self.domain[2]
        return c + (np.arange(self.ny) + 0.5) * self.hy

    def centers(self) -> np.ndarray:
        """All cell centers as an ``(nx * ny, 2)`` array in row-major order."""
        xs, ys = np.meshgrid(self.x_centers(), self.y_centers(), indexing="ij")
        return np.stack([xs.ravel(), ys.ravel()], axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed domain rectangle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        a, b, c, d = self.domain
        return (pts[:, 0] >= a) & (pts[:, 0] <= b) & (pts[:, 1] >= c) & (pts[:, 1] <= d)


@dataclass(frozen=True)
class DenseField:
    """Scalar field sampled at the cell centers of a rectangular grid."""

    nx: int
    ny: int
    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        GridSpec(self.nx, self.ny, self.domain)  # validates counts and domain
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.nx * self.ny:
            raise ValueError(
                f"value count {vals.size} does not match grid {self.nx}x{self.ny}"
            )
        object.__setattr__(self, "values", vals.reshape(self.nx, self.ny))

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.domain)

    @property
    def hx(self) -> float:
        return self.grid.hx

    @property
    def hy(self) -> float:
        return self.grid.hy

    def with_values(self, values: np.ndarray) -> "DenseField":
        return DenseField(self.nx, self.ny, self.domain, values)

    def same_grid(self, other) -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(
            self.domain, other.domain, rtol=0, atol=0
        )


def zeros_field(grid: GridSpec) -> DenseField:
    return DenseField(grid.nx, grid.ny, grid.domain, np.zeros((grid.nx, grid.ny)))


def field_from_values(grid: GridSpec, values: np.ndarray) -> DenseField:
    return DenseField(grid.nx, grid.ny, grid.domain, values)
