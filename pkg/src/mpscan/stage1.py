"""First reconstruction stage: estimate the matrix-valued core operator
from phase-space samples.

The unknown is a 2x2-matrix field ``A`` on the reconstruction grid.  It
minimises the convex quadratic

    J[A] = (lam / N) ||D A||^2  +  (1 / L) sum_k |s_k - I[A](r_k) v_k|^2

where ``D`` collects forward differences scaled by the grid steps (with
out-of-range differences dropped, i.e. replicate boundary), ``I`` is the
bicubic sampling operator, ``N`` the pixel count and ``L`` the sample
count.  The minimiser solves ``G A = b`` with ``G`` the (symmetric PSD)
Hessian of ``J``; conjugate gradients from ``A = 0`` does the solve.  The
trace of ``A`` is the deconvolution input of the second stage.

Per-sample bicubic stencil weights are precomputed once into a sparse
matrix, so one application of ``G`` costs two sparse products.  Samples are
re-ordered canonically (patch, time, position) before assembly, making the
result independent of input ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mpscan.errors import DivergenceError
from mpscan.geometry import ScanData
from mpscan.grid import DenseField, Domain, GridSpec
from mpscan.interpolation import bicubic_stencil, interpolate_values
from mpscan.solvers import conjugate_gradient


@dataclass(frozen=True)
class CoreOperatorField:
    """2x2-matrix-valued field on a cell-centered grid."""

    nx: int
    ny: int
    domain: Domain
    values: np.ndarray  # (nx, ny, 2, 2)

    def __post_init__(self):
        GridSpec(self.nx, self.ny, self.domain)
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.nx * self.ny * 4:
            raise ValueError(f"expected {self.nx}x{self.ny}x2x2 values, got {vals.shape}")
        object.__setattr__(self, "values", vals.reshape(self.nx, self.ny, 2, 2))

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.domain)

    def trace(self) -> DenseField:
        """Elementwise matrix trace as a scalar field."""
        u = self.values[..., 0, 0] + self.values[..., 1, 1]
        return DenseField(self.nx, self.ny, self.domain, u)


@dataclass(frozen=True)
class Stage1Config:
    lam: float = 5.0
    cg_max_iters: int = 1000
    cg_tolerance: float = 1e-12

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("regularization weight must be positive")
        if self.cg_max_iters < 1 or not self.cg_tolerance > 0:
            raise ValueError("invalid conjugate-gradient budget")


@dataclass
class Stage1Diagnostics:
    iterations: int
    residual_norm: float
    converged: bool
    sample_count: int


def interpolate(field, points):
    """Bicubic evaluation of a scalar or matrix field at arbitrary points.

    At a cell center the stencil weights collapse to the nodal value; a
    constant field reproduces exactly everywhere.  Points outside the field
    domain raise.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    out = interpolate_values(field.values, pts, field.grid)
    return out[0] if single else out


class Stage1System:
    """Cached sampling operator and right-hand side for one sample set."""

    def __init__(self, samples, grid: GridSpec):
        data = ScanData.from_samples(samples).sorted_canonical()
        if len(data) == 0:
            raise ValueError("stage 1 needs at least one sample")
        self.grid = grid
        self.data = data
        idx, w = bicubic_stencil(data.r, grid)
        n = grid.nx * grid.ny
        rows = np.repeat(np.arange(len(data)), 16)
        self.weights = sp.csr_matrix(
            (w.ravel(), (rows, idx.ravel())), shape=(len(data), n)
        )
        self.v = data.v
        self.s = data.s

    @property
    def sample_count(self) -> int:
        return len(self.data)

    def predict(self, a_values: np.ndarray) -> np.ndarray:
        """Model signals ``I[A](r_k) v_k`` for all samples."""
        flat = a_values.reshape(-1, 4)
        at_pts = (self.weights @ flat).reshape(-1, 2, 2)
        return np.einsum("kpq,kq->kp", at_pts, self.v)

    def _scatter(self, signals: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`predict`: scatter ``(2/L) sig_k v_k^T`` onto
        the stencils."""
        outer = np.einsum("kp,kq->kpq", signals, self.v).reshape(-1, 4)
        out = self.weights.T @ (outer * (2.0 / self.sample_count))
        return out.reshape(self.grid.nx, self.grid.ny, 2, 2)

    def rhs(self) -> np.ndarray:
        return self._scatter(self.s)

    def regularizer_gradient(self, a_values: np.ndarray, lam: float) -> np.ndarray:
        """Exact gradient of ``(lam / N) ||D A||^2``."""
        hx, hy = self.grid.hx, self.grid.hy
        out = np.zeros_like(a_values)
        gx = np.diff(a_values, axis=0) / hx
        out[:-1] -= gx / hx
        out[1:] += gx / hx
        gy = np.diff(a_values, axis=1) / hy
        out[:, :-1] -= gy / hy
        out[:, 1:] += gy / hy
        n = self.grid.nx * self.grid.ny
        return (2.0 * lam / n) * out

    def apply_g(self, a_values: np.ndarray, lam: float) -> np.ndarray:
        """Hessian application ``G A`` (data Gram term plus regularizer)."""
        return self._scatter(self.predict(a_values)) + self.regularizer_gradient(
            a_values, lam
        )

    def objective(self, a_values: np.ndarray, lam: float) -> float:
        """The quadratic ``J[A]`` itself (used by gradient tests)."""
        hx, hy = self.grid.hx, self.grid.hy
        gx = np.diff(a_values, axis=0) / hx
        gy = np.diff(a_values, axis=1) / hy
        n = self.grid.nx * self.grid.ny
        reg = (np.sum(gx * gx) + np.sum(gy * gy)) * (1 / n)
        misfit = self.s - self.predict(a_values)
        return float(lam * reg + np.sum(misfit * misfit) / self.sample_count)


def assemble_rhs(samples, grid: GridSpec) -> CoreOperatorField:
    """Right-hand side field: signals scattered onto the bicubic stencils,
    weighted by the velocity components and scaled by ``2 / L``.  Empty
    sample sets give the zero field."""
    data = ScanData.from_samples(samples)
    if len(data) == 0:
        return CoreOperatorField(grid.nx, grid.ny, grid.domain,
                                 np.zeros((grid.nx, grid.ny, 2, 2)))
    system = Stage1System(data, grid)
    return CoreOperatorField(grid.nx, grid.ny, grid.domain, system.rhs())


def apply_G(a: CoreOperatorField, samples, lam: float,
            system: Stage1System | None = None) -> CoreOperatorField:
    """Apply the stage-1 Hessian to a matrix field.

    Pass a prebuilt :class:`Stage1System` to reuse cached stencil weights.
    """
    if system is None:
        system = Stage1System(samples, a.grid)
    return CoreOperatorField(a.nx, a.ny, a.domain, system.apply_g(a.values, lam))


def solve_stage1(samples, grid: GridSpec, config: Stage1Config):
    """Run the first stage: conjugate gradients on ``G A = b`` from zero.

    Returns the matrix field, its trace and solver diagnostics.
    """
    system = Stage1System(samples, grid)
    b = system.rhs()
    shape = b.shape

    def apply_flat(x):
        return system.apply_g(x.reshape(shape), config.lam).ravel()

    result = conjugate_gradient(
        apply_flat, b.ravel(), max_iters=config.cg_max_iters, tol=config.cg_tolerance
    )
    if not np.all(np.isfinite(result.x)):
        raise DivergenceError("stage 1 solve produced non-finite values")
    a = CoreOperatorField(grid.nx, grid.ny, grid.domain, result.x.reshape(shape))
    diag = Stage1Diagnostics(
        iterations=result.iterations,
        residual_norm=result.residual_norm,
        converged=result.converged,
        sample_count=system.sample_count,
    )
    return a, a.trace(), diag
