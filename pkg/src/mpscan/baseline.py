"""System-matrix baseline: delta-scan calibration, Tikhonov inversion with
patch stitching, and joint non-negative fused-lasso inversion.

A system matrix has one column per grid cell holding the noiseless scan of
that cell's indicator: the x components of all samples stacked first, then
all y components.  By linearity ``S @ vec(rho)`` reproduces the noiseless
scan of any density on the grid, so the matrix is the measurement-based
counterpart of the convolution forward model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpscan.errors import DivergenceError
from mpscan.geometry import ScanData, ScanPlan, scan_points
from mpscan.grid import DenseField, GridSpec
from mpscan.physics import _langevin_over_xi, langevin_prime
from mpscan.solvers import conjugate_gradient, generalized_forward_backward, power_iteration
from mpscan.stage2 import (
    Stage2Config,
    Stage2Diagnostics,
    soft_threshold,
    tv_gradient,
    tv_smooth,
)


@dataclass
class SystemMatrix:
    """Dense system matrix with its grid and sample bookkeeping."""

    matrix: np.ndarray  # (2 * n_samples, n_cells)
    grid: GridSpec
    n_samples: int

    def __post_init__(self):
        rows, cols = self.matrix.shape
        if cols != self.grid.nx * self.grid.ny or rows != 2 * self.n_samples:
            raise ValueError(f"system matrix shape {self.matrix.shape} inconsistent")
        self._normal = None
        self._normal_norm = None

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def normal_matrix(self) -> np.ndarray:
        """Cached ``S^T S`` (cells x cells)."""
        if self._normal is None:
            self._normal = self.matrix.T @ self.matrix
        return self._normal

    def normal_norm(self) -> float:
        """Power-iteration estimate of the spectral norm of ``S^T S``."""
        if self._normal_norm is None:
            sts = self.normal_matrix()
            self._normal_norm = power_iteration(lambda x: sts @ x, self.cols)
        return self._normal_norm


def stack_signals(data: ScanData) -> np.ndarray:
    """Signal vector matching the system-matrix row layout (x block, y block)."""
    ordered = data.sorted_canonical()
    return np.concatenate([ordered.s[:, 0], ordered.s[:, 1]])


def build_system_matrix(grid: GridSpec, plan: ScanPlan, h, chunk: int = 256) -> SystemMatrix:
    """Simulate the noiseless scan of every cell indicator on ``grid``.

    Column ``i * ny + j`` holds the scan of the phantom that is one on cell
    ``(i, j)`` and zero elsewhere.  Equivalent to simulating each delta
    phantom separately, but evaluated in bulk: for each scan point the
    kernel Jacobian against every cell center is one row of contributions.
    """
    hh = h.h if hasattr(h, "h") else float(h)
    t, _, pos, vel = scan_points(plan, grid.domain)
    n_samples = t.size
    centers = grid.centers()
    n_cells = centers.shape[0]
    area = grid.cell_area
    s = np.empty((2 * n_samples, n_cells))
    for lo in range(0, n_samples, chunk):
        p = pos[lo:lo + chunk]
        v = vel[lo:lo + chunk]
        diff = p[:, None, :] - centers[None, :, :]
        r2 = np.sum(diff * diff, axis=-1)
        r = np.sqrt(r2)
        xi = r / hh
        radial = langevin_prime(xi) / hh
        tangential = _langevin_over_xi(xi) / hh
        zv = np.einsum("pcx,px->pc", diff, v)
        safe_r2 = np.where(r2 > 0, r2, 1.0)
        coef = np.where(r2 > 0, (radial - tangential) * zv / safe_r2, 0.0)
        sig = coef[..., None] * diff + tangential[..., None] * v[:, None, :]
        hi = lo + p.shape[0]
        s[lo:hi] = sig[..., 0] * area
        s[n_samples + lo : n_samples + hi] = sig[..., 1] * area
    return SystemMatrix(matrix=s, grid=grid, n_samples=n_samples)


def tikhonov_solve(system: SystemMatrix, signal: np.ndarray, mu: float,
                   max_iters: int = 10_000, tol: float = 1e-12) -> DenseField:
    """Ridge-regularized inversion: conjugate gradients on the normal
    equations ``(S^T S + mu I) rho = S^T signal``."""
    if not mu > 0:
        raise ValueError("Tikhonov weight must be positive")
    signal = np.asarray(signal, dtype=float).ravel()
    if signal.size != system.rows:
        raise ValueError(f"signal length {signal.size} does not match {system.rows} rows")
    sts = system.normal_matrix()
    rhs = system.matrix.T @ signal

    def apply_a(x):
        return sts @ x + mu * x

    result = conjugate_gradient(apply_a, rhs, max_iters=max_iters, tol=tol)
    if not np.all(np.isfinite(result.x)):
        raise DivergenceError("Tikhonov solve produced non-finite values")
    g = system.grid
    return DenseField(g.nx, g.ny, g.domain, result.x.reshape(g.nx, g.ny))


def stitch(patches) -> DenseField:
    """Assemble patch reconstructions into one field.

    ``patches`` is a list of ``(field, (i0, j0))`` pairs placing each patch
    at block origin ``(i0, j0)`` of the target index space.  The target grid
    is the tight bounding box; overlapping cells are averaged and uncovered
    cells raise.
    """
    if not patches:
        raise ValueError("nothing to stitch")
    nx = max(i0 + f.nx for f, (i0, _) in patches)
    ny = max(j0 + f.ny for f, (_, j0) in patches)
    acc = np.zeros((nx, ny))
    count = np.zeros((nx, ny), dtype=int)
    a = min(f.domain[0] for f, _ in patches)
    b = max(f.domain[1] for f, _ in patches)
    c = min(f.domain[2] for f, _ in patches)
    d = max(f.domain[3] for f, _ in patches)
    for f, (i0, j0) in patches:
        if i0 < 0 or j0 < 0:
            raise ValueError(f"negative block origin ({i0}, {j0})")
        acc[i0:i0 + f.nx, j0:j0 + f.ny] += f.values
        count[i0:i0 + f.nx, j0:j0 + f.ny] += 1
    if np.any(count == 0):
        raise ValueError("patch regions leave gaps in the target grid")
    return DenseField(nx, ny, (a, b, c, d), acc / count)


def fused_lasso_sm_solve(system: SystemMatrix, signal: np.ndarray,
                         config: Stage2Config):
    """Joint inversion of the system matrix with the stage-2 solver.

    Identical splitting iteration, with the convolution data term replaced
    by ``||S rho - s||^2`` (gradient ``2 S^T (S rho - s)``, evaluated via
    the cached normal matrix).  Initialised at zero: the signal domain does
    not match the image domain, so there is no trace to start from.
    """
    signal = np.asarray(signal, dtype=float).ravel()
    if signal.size != system.rows:
        raise ValueError(f"signal length {signal.size} does not match {system.rows} rows")
    g = system.grid
    sts = system.normal_matrix()
    sts_rhs = system.matrix.T @ signal
    sig_sq = float(signal @ signal)
    shape = (g.nx, g.ny)

    def as_field(x):
        return DenseField(g.nx, g.ny, g.domain, x.reshape(shape))

    def grad(x):
        out = 2.0 * (sts @ x - sts_rhs)
        if config.mu != 0.0:
            out = out + config.mu * tv_gradient(as_field(x), config.delta).values.ravel()
        return out

    def objective(x):
        val = float(x @ (sts @ x)) - 2.0 * float(sts_rhs @ x) + sig_sq
        if config.mu != 0.0:
            val += config.mu * tv_smooth(as_field(x), config.delta)
        if config.beta != 0.0:
            val += config.beta * float(np.sum(np.abs(x)))
        return val

    threshold = 2.0 * config.gamma * config.beta
    res = generalized_forward_backward(
        np.zeros(g.nx * g.ny),
        grad=grad,
        prox1=lambda x: soft_threshold(x, threshold),
        prox2=lambda x: np.maximum(x, 0.0),
        gamma=config.gamma,
        relaxation=config.relaxation,
        tol=config.tolerance,
        max_iters=config.max_iters,
        objective=objective,
        track_every=config.track_every,
    )
    return as_field(res.x), Stage2Diagnostics.from_gfb(res)
