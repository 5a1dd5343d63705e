"""Procedural ground-truth distributions and grid resampling.

All phantoms are rendered deterministically at cell centers with values in
``[0, 1]`` and support strictly inside the domain (every feature lives
within the central 90% of the rectangle).  Geometry is expressed in design
coordinates ``[-1, 1]^2`` and scaled to the requested domain.

Frozen geometries:

* ``vessel``    - three curved tubes (cubic Bezier center lines of half
                  widths 0.075 / 0.05 / 0.04); binary.
* ``shape``     - five-point star with straight spikes plus a disk; binary.
* ``concentration`` - four axis-aligned squares at levels 1, 0.75, 0.5, 0.25
                  (lowest level bottom right).
* ``frame``     - square ring, outer half width 0.72, thickness 0.17; binary.
* ``plus``      - centered cross, arm half length 0.85, half width 0.16.
* ``delta``     - indicator of a single grid cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from mpscan.grid import DenseField, Domain, GridSpec
from mpscan.interpolation import interpolate_values

PHANTOM_KINDS = ("vessel", "shape", "concentration", "frame", "plus", "delta")

_VESSEL_CURVES = (
    # (control points, half width)
    (((-0.85, -0.55), (-0.30, -0.92), (0.55, -0.05), (0.80, 0.62)), 0.075),
    (((-0.18, -0.50), (-0.38, -0.10), (-0.58, 0.22), (-0.62, 0.62)), 0.050),
    (((0.38, 0.10), (0.28, 0.32), (0.12, 0.42), (0.02, 0.60)), 0.040),
)

_STAR_CENTER = (-0.12, 0.10)
_STAR_OUTER = 0.78
_STAR_INNER = 0.24
_STAR_SPIKES = 5
_STAR_PHASE = 0.35
_DISK_CENTER = (0.60, -0.58)
_DISK_RADIUS = 0.16

_CONC_SIDE = 0.55
_CONC_LEVELS = {(-0.45, 0.45): 1.0, (0.45, 0.45): 0.75,
                (-0.45, -0.45): 0.5, (0.45, -0.45): 0.25}

_FRAME_OUTER = 0.72
_FRAME_INNER = 0.55

_PLUS_ARM = 0.85
_PLUS_WIDTH = 0.16


@dataclass(frozen=True)
class PhantomSpec:
    """Which phantom to render, on which grid."""

    kind: str
    nx: int
    ny: int
    domain: Domain
    delta_index: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.kind == "delta" and self.delta_index is None:
            raise ValueError("delta phantom needs a cell index")


def _design_coords(grid: GridSpec):
    a, b, c, d = grid.domain
    cx, wx = (a + b) / 2, (b - a) / 2
    cy, wy = (c + d) / 2, (d - c) / 2
    xs = (grid.x_centers() - cx) / wx
    ys = (grid.y_centers() - cy) / wy
    return np.meshgrid(xs, ys, indexing="ij")


def _bezier_points(control, n=600):
    p = np.asarray(control, dtype=float)
    u = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - u) ** 3 * p[0] + 3 * (1 - u) ** 2 * u * p[1]
            + 3 * (1 - u) * u ** 2 * p[2] + u ** 3 * p[3])


def _vessel(x, y):
    pts = np.column_stack([x.ravel(), y.ravel()])
    vals = np.zeros(pts.shape[0])
    for control, half_width in _VESSEL_CURVES:
        tree = cKDTree(_bezier_points(control))
        dist, _ = tree.query(pts)
        vals[dist <= half_width] = 1.0
    return vals.reshape(x.shape)

def _shape(x, y):
    dx, dy = x - _STAR_CENTER[0], y - _STAR_CENTER[1]
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    w = (_STAR_SPIKES * (theta + _STAR_PHASE) / (2 * np.pi)) % 1.0
    profile = 1.0 - 2.0 * np.minimum(w, 1.0 - w)
    radius = _STAR_INNER + (_STAR_OUTER - _STAR_INNER) * profile
    star = r <= radius
    disk = np.hypot(x - _DISK_CENTER[0], y - _DISK_CENTER[1]) <= _DISK_RADIUS
    return np.where(star | disk, 1.0, 0.0)

def _concentration(x, y):
    vals = np.zeros_like(x)
    half = _CONC_SIDE / 2
    for (cx, cy), level in _CONC_LEVELS.items():
        inside = (np.abs(x - cx) <= half) & (np.abs(y - cy) <= half)
        vals[inside] = level
    return vals

def _frame(x, y):
    m = np.maximum(np.abs(x), np.abs(y))
    return np.where((m >= _FRAME_INNER) & (m <= _FRAME_OUTER), 1.0, 0.0)

def _plus(x, y):
    horiz = (np.abs(x) <= _PLUS_ARM) & (np.abs(y) <= _PLUS_WIDTH)
    vert = (np.abs(y) <= _PLUS_ARM) & (np.abs(x) <= _PLUS_WIDTH)
    return np.where(horiz | vert, 1.0, 0.0)


_RENDERERS = {"vessel": _vessel, "shape": _shape, "concentration": _concentration,
              "frame": _frame, "plus": _plus}


def render(spec: PhantomSpec) -> DenseField:
    """Render a phantom at the cell centers of its grid."""
    grid = GridSpec(spec.nx, spec.ny, spec.domain)
    if spec.kind == "delta":
        i, j = spec.delta_index
        if not (0 <= i < spec.nx and 0 <= j < spec.ny):
            raise ValueError(f"delta index {spec.delta_index} outside {spec.nx}x{spec.ny}")
        values = np.zeros((spec.nx, spec.ny))
        values[i, j] = 1.0
        return DenseField(spec.nx, spec.ny, grid.domain, values)
    x, y = _design_coords(grid)
    return DenseField(spec.nx, spec.ny, grid.domain, _RENDERERS[spec.kind](x, y))


def make_phantom(kind: str, nx: int, ny: int, domain: Domain,
                 delta_index: tuple[int, int] | None = None) -> DenseField:
    return render(PhantomSpec(kind, nx, ny, domain, delta_index))


def resample(field: DenseField, nx: int, ny: int) -> DenseField:
    """Resample a field onto a new grid over the same domain.

    Bicubic interpolation at the new cell centers, clamped to ``[0, 1]``.
    Produces graded concentration values from binary phantoms.
    """
    if nx < 4 or ny < 4:
        raise ValueError("target grid must be at least 4x4")
    target = GridSpec(nx, ny, field.domain)
    vals = interpolate_values(field.values, target.centers(), field.grid)
    vals = np.clip(vals.reshape(nx, ny), 0.0, 1.0)
    return DenseField(nx, ny, field.domain, vals)
