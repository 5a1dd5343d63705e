"""Bicubic interpolation on cell-centered grids using cubic Lagrange weights.

A point is attributed to the cell whose center is nearest, giving a local
coordinate ``s in [-1/2, 1/2)``.  The 4x4 stencil spans cell offsets
``-1, 0, +1, +2`` in each axis; stencil indices falling outside the grid
replicate the nearest valid cell.  The weights are the cubic Lagrange
polynomials on the nodes ``{-1, 0, 1, 2}``, which reproduce polynomials up
to degree three exactly (away from clipped stencils) and sum to one for
any ``s``.
"""

from __future__ import annotations

import numpy as np

from mpscan.errors import OutOfDomainError
from mpscan.grid import GridSpec

STENCIL_OFFSETS = np.array([-1, 0, 1, 2])


def lagrange_weights(s: np.ndarray) -> np.ndarray:
    """Cubic Lagrange weights on nodes {-1, 0, 1, 2} for local coordinate s.

    Returns an array of shape ``s.shape + (4,)``.  At ``s = 0`` the weights
    are ``(0, 1, 0, 0)``.
    """
    s = np.asarray(s, dtype=float)
    w = np.empty(s.shape + (4,))
    w[..., 0] = -s * (s - 1.0) * (s - 2.0) / 6.0
    w[..., 1] = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0
    w[..., 2] = -s * (s + 1.0) * (s - 2.0) / 2.0
    w[..., 3] = s * (s + 1.0) * (s - 1.0) / 6.0
    return w


def _axis_stencil(coords, lo, h, n):
    """Cell indices, stencil indices (clipped) and weights along one axis."""
    u = (coords - lo) / h
    cell = np.clip(np.floor(u).astype(int), 0, n - 1)
    s = u - cell - 0.5
    idx = np.clip(cell[:, None] + STENCIL_OFFSETS[None, :], 0, n - 1)
    return idx, lagrange_weights(s)


def bicubic_stencil(points: np.ndarray, grid: GridSpec, check_domain: bool = True):
    """Flattened stencil indices and weights for a batch of points.

    Returns ``(idx, w)`` with shapes ``(n, 16)``: ``idx`` are row-major cell
    indices into the grid, ``w`` the corresponding tensor-product weights.
    Raises :class:`OutOfDomainError` for points outside the closed domain.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if check_domain and not grid.contains(pts).all():
        bad = pts[~grid.contains(pts)][0]
        raise OutOfDomainError(f"point {tuple(bad)} outside domain {grid.domain}")
    a, _, c, _ = grid.domain
    ix, wx = _axis_stencil(pts[:, 0], a, grid.hx, grid.nx)
    iy, wy = _axis_stencil(pts[:, 1], c, grid.hy, grid.ny)
    idx = (ix[:, :, None] * grid.ny + iy[:, None, :]).reshape(-1, 16)
    w = (wx[:, :, None] * wy[:, None, :]).reshape(-1, 16)
    return idx, w


def interpolate_values(values: np.ndarray, points: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Evaluate a gridded array at arbitrary points.

    ``values`` may have trailing component axes, e.g. shape ``(nx, ny)`` or
    ``(nx, ny, 2, 2)``; the result has shape ``(n,) + trailing``.
    """
    idx, w = bicubic_stencil(points, grid)
    flat = values.reshape(grid.nx * grid.ny, -1)
    out = np.einsum("nk,nkc->nc", w, flat[idx])
    trailing = values.shape[2:]
    return out.reshape((idx.shape[0],) + trailing)
