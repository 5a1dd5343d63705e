"""Second reconstruction stage: regularized deconvolution of the trace.

The trace field ``u`` from stage 1 approximates ``kappa_h`` convolved with
the particle density, so the density is recovered by minimising

    E[rho] = ||K rho - u||^2 + mu * R_delta[rho] + beta * ||rho||_1 + i_+(rho)

where ``K`` is the (self-adjoint) discrete convolution with the sampled
kernel restricted to the domain, ``R_delta`` the smoothed total variation

    R_delta[rho] = h_x h_y * sum_ij sqrt(W_ij + delta),

``W`` the average of squared forward/backward differences (density padded
with zeros: its support lies inside the domain), ``beta ||.||_1`` a sparsity
prior and ``i_+`` the non-negativity indicator.  The smooth part is handled
by its exact gradient; the two non-smooth terms enter through their
proximal maps (soft threshold, positive part) inside a generalized
forward-backward iteration with averaging weights 1/2, initialised at
``u``.  Convergence is certified when the step size is below twice the
reciprocal of the Lipschitz bound computed by :func:`lipschitz_bound`;
in practice far larger steps still converge and are used by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mpscan.errors import DivergenceError, GridMismatchError
from mpscan.grid import DenseField, GridSpec
from mpscan.physics import kernel_scalar
from mpscan.solvers import GFBResult, generalized_forward_backward, power_iteration


@dataclass(frozen=True)
class Stage2Config:
    """Deconvolution parameters; defaults follow the reference setup."""

    mu: float = 1e-4
    beta: float = 1.0
    delta: float = 1e-16
    gamma: float = 1e-3
    relaxation: float = 1.0
    tolerance: float = 5e-6
    max_iters: int = 100_000
    track_every: int = 100

    def __post_init__(self):
        if self.mu < 0 or self.beta < 0:
            raise ValueError("regularization weights must be non-negative")
        if not (self.delta > 0 and self.gamma > 0):
            raise ValueError("delta and gamma must be positive")
        if not (0 < self.relaxation <= 1.5):
            raise ValueError("relaxation must lie in (0, 1.5]")


class ConvolutionOperator:
    """FFT-based linear convolution with the scalar kernel on a fixed grid.

    The kernel is sampled at every pairwise cell-center offset and scaled by
    the cell area, so applying the operator equals the midpoint-rule
    quadrature of the restricted convolution integral.  The transform is
    cached at a power-of-two padded size (>= twice the larger grid side
    minus one, which keeps the extracted window alias-free).
    """

    def __init__(self, grid: GridSpec, h: float):
        self.grid = grid
        self.h = float(h) if not hasattr(h, "h") else h.h
        nx, ny = grid.nx, grid.ny
        dx = np.arange(-(nx - 1), nx) * grid.hx
        dy = np.arange(-(ny - 1), ny) * grid.hy
        pts = np.stack(np.meshgrid(dx, dy, indexing="ij"), axis=-1)
        self.kernel = kernel_scalar(pts, self.h) * grid.cell_area
        size = 1
        while size < 2 * max(nx, ny) - 1:
            size *= 2
        self.padded_size = size
        kpad = np.zeros((size, size))
        kpad[: 2 * nx - 1, : 2 * ny - 1] = self.kernel
        self._kernel_hat = np.fft.rfft2(kpad)

    def apply(self, values: np.ndarray) -> np.ndarray:
        nx, ny = self.grid.nx, self.grid.ny
        size = self.padded_size
        rpad = np.zeros((size, size))
        rpad[:nx, :ny] = values
        full = np.fft.irfft2(np.fft.rfft2(rpad) * self._kernel_hat, s=(size, size))
        return full[nx - 1 : 2 * nx - 1, ny - 1 : 2 * ny - 1]

    def kernel_l1(self) -> float:
        """Absolute column sum of the underlying matrix (a norm bound)."""
        return float(np.sum(np.abs(self.kernel)))

    def normal_norm(self, iters: int = 100, tol: float = 1e-8, seed: int = 0) -> float:
        """Power-iteration estimate of the spectral norm of ``K^T K``."""
        n = self.grid.nx * self.grid.ny

        def op(x):
            y = self.apply(x.reshape(self.grid.shape))
            return self.apply(y).ravel()  # K self-adjoint

        return power_iteration(op, n, iters=iters, tol=tol, seed=seed)


def convolve(kop: ConvolutionOperator, rho: DenseField) -> DenseField:
    """Apply the convolution operator to a field on the same grid."""
    if not (rho.nx, rho.ny) == kop.grid.shape or not np.allclose(
        rho.domain, kop.grid.domain, rtol=0, atol=0
    ):
        raise GridMismatchError(
            f"field grid {rho.nx}x{rho.ny} {rho.domain} does not match operator grid"
        )
    return rho.with_values(kop.apply(rho.values))


# ---------------------------------------------------------------------------
# Smoothed total variation
# ---------------------------------------------------------------------------

def _difference_quotients(values: np.ndarray, hx: float, hy: float):
    """Forward/backward difference quotients with zero padding."""
    p = np.pad(values, 1)
    core = p[1:-1, 1:-1]
    dxp = (p[2:, 1:-1] - core) / hx
    dxm = (core - p[:-2, 1:-1]) / hx
    dyp = (p[1:-1, 2:] - core) / hy
    dym = (core - p[1:-1, :-2]) / hy
    return dxp, dxm, dyp, dym


def _gradient_energy(values: np.ndarray, hx: float, hy: float) -> np.ndarray:
    dxp, dxm, dyp, dym = _difference_quotients(values, hx, hy)
    return 0.5 * (dxp * dxp + dxm * dxm) + 0.5 * (dyp * dyp + dym * dym)


def tv_smooth(rho: DenseField, delta: float) -> float:
    """Value of the smoothed total variation functional."""
    w = _gradient_energy(rho.values, rho.hx, rho.hy)
    return float(rho.hx * rho.hy * np.sum(np.sqrt(w + delta)))


def tv_gradient(rho: DenseField, delta: float) -> DenseField:
    """Exact gradient of :func:`tv_smooth` at ``rho``.

    Averaged-coefficient divergence stencil: with ``g = 1/sqrt(delta + W)``
    (extended by zero outside the grid) the gradient at a cell combines the
    forward/backward differences weighted by the means of ``g`` over the
    two cells each difference touches, times the cell area.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    hx, hy = rho.hx, rho.hy
    dxp, dxm, dyp, dym = _difference_quotients(rho.values, hx, hy)
    w = 0.5 * (dxp * dxp + dxm * dxm) + 0.5 * (dyp * dyp + dym * dym)
    g = 1.0 / np.sqrt(delta + w)
    gp = np.pad(g, 1)
    axp = 0.5 * (gp[2:, 1:-1] + g)
    axm = 0.5 * (g + gp[:-2, 1:-1])
    ayp = 0.5 * (gp[1:-1, 2:] + g)
    aym = 0.5 * (g + gp[1:-1, :-2])
    div = (axp * dxp - axm * dxm) / hx + (ayp * dyp - aym * dym) / hy
    return rho.with_values(-hx * hy * div)


def grad_F(rho: DenseField, u: DenseField, kop: ConvolutionOperator,
           mu: float, delta: float) -> DenseField:
    """Gradient of the smooth energy part ``||K rho - u||^2 + mu R_delta``.

    Exact: ``2 K^T (K rho - u) + mu * tv_gradient(rho)`` with ``K^T = K``.
    """
    residual = kop.apply(rho.values) - u.values
    data = 2.0 * kop.apply(residual)
    if mu != 0.0:
        data = data + mu * tv_gradient(rho, delta).values
    return rho.with_values(data)


# ---------------------------------------------------------------------------
# Proximal maps
# ---------------------------------------------------------------------------

def soft_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def prox_l1(v: DenseField, threshold: float) -> DenseField:
    """Soft threshold: shrink each value toward zero by ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return v.with_values(soft_threshold(v.values, threshold))


def prox_nonneg(v: DenseField) -> DenseField:
    """Projection onto the non-negative orthant (elementwise positive part)."""
    return v.with_values(np.maximum(v.values, 0.0))


# ---------------------------------------------------------------------------
# Step-size certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LipschitzBound:
    value: float
    tv_term: float
    c1: float
    data_norm: float


def lipschitz_bound(grid: GridSpec, mu: float, delta: float,
                    kop: ConvolutionOperator) -> LipschitzBound:
    """Upper bound on the Lipschitz constant of the smooth-energy gradient.

    ``mu * 2 nx ny (1/hx + 1/hy) (sqrt(2) + C1) + ||K^T K||`` where
    ``C1 = (2 sqrt(2) / 3^(3/2)) sqrt(1/hx^2 + 1/hy^2) / sqrt(delta)`` and
    the operator norm is estimated by power iteration.  The TV term scales
    as ``delta^(-1/2)`` and dwarfs the data term for small ``delta``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    hx, hy = grid.hx, grid.hy
    c1 = (2.0 * np.sqrt(2.0) / 3.0 ** 1.5) * np.sqrt(1.0 / hx**2 + 1.0 / hy**2) / np.sqrt(delta)
    tv_lip = 2.0 * grid.nx * grid.ny * (1.0 / hx + 1.0 / hy) * (np.sqrt(2.0) + c1)
    data_norm = kop.normal_norm()
    return LipschitzBound(value=mu * tv_lip + data_norm, tv_term=mu * tv_lip,
                          c1=float(c1), data_norm=data_norm)


@dataclass(frozen=True)
class ConvergenceCheck:
    certified: bool
    eta: float
    gamma_ok: bool
    relaxation_ok: bool
    gamma_max: float
    relaxation_max: float


def check_convergence_params(config: Stage2Config, lipschitz: float) -> ConvergenceCheck:
    """Diagnostic check of the provable step-size regime.

    With ``eta = 1 / lipschitz``, convergence is guaranteed for
    ``gamma in (0, 2 eta)`` and relaxation in
    ``(0, min(3/2, 1/2 + eta/gamma))``.  Purely informational: practical
    runs use step sizes far outside this regime.
    """
    if not lipschitz > 0:
        raise ValueError("Lipschitz constant must be positive")
    eta = 1.0 / lipschitz
    gamma_max = 2.0 * eta
    relaxation_max = min(1.5, 0.5 + eta / config.gamma)
    gamma_ok = 0.0 < config.gamma < gamma_max
    relaxation_ok = 0.0 < config.relaxation < relaxation_max
    return ConvergenceCheck(
        certified=gamma_ok and relaxation_ok,
        eta=eta,
        gamma_ok=gamma_ok,
        relaxation_ok=relaxation_ok,
        gamma_max=gamma_max,
        relaxation_max=relaxation_max,
    )


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

@dataclass
class Stage2Diagnostics:
    iterations: int
    relative_residual: float
    converged: bool
    objective_initial: float
    objective_final: float
    objective_trace: list = field(default_factory=list)

    @classmethod
    def from_gfb(cls, res: GFBResult) -> "Stage2Diagnostics":
        return cls(iterations=res.iterations, relative_residual=res.relative_residual,
                   converged=res.converged, objective_initial=res.objective_initial,
                   objective_final=res.objective_final, objective_trace=res.objective_trace)


def objective_value(rho: DenseField, u: DenseField, kop: ConvolutionOperator,
                    mu: float, delta: float, beta: float) -> float:
    """Full non-smooth energy (without the indicator term)."""
    residual = kop.apply(rho.values) - u.values
    val = float(np.sum(residual * residual))
    if mu != 0.0:
        val += mu * tv_smooth(rho, delta)
    if beta != 0.0:
        val += beta * float(np.sum(np.abs(rho.values)))
    return val


def solve_stage2(u: DenseField, config: Stage2Config, kop: ConvolutionOperator):
    """Non-negative fused-lasso deconvolution of the trace field.

    Generalized forward-backward iteration started at ``u``; stops when the
    relative update drops below the configured tolerance.  Returns the
    reconstruction and diagnostics including an objective trace.
    """
    if kop.grid.shape != (u.nx, u.ny):
        raise GridMismatchError("trace grid does not match operator grid")
    shape = u.values.shape
    threshold = 2.0 * config.gamma * config.beta

    def grad(x):
        return grad_F(u.with_values(x.reshape(shape)), u, kop,
                      config.mu, config.delta).values.ravel()

    def objective(x):
        return objective_value(u.with_values(x.reshape(shape)), u, kop,
                               config.mu, config.delta, config.beta)

    res = generalized_forward_backward(
        u.values.ravel(),
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
    return u.with_values(res.x.reshape(shape)), Stage2Diagnostics.from_gfb(res)


def solve_landweber(u: DenseField, mu: float, delta: float, gamma: float,
                    kop: ConvolutionOperator, iters: int,
                    tolerance: float | None = None) -> DenseField:
    """Plain gradient descent on the smooth energy, started at ``u``.

    The ablation baseline: no positivity constraint, no sparsity prior.
    """
    if kop.grid.shape != (u.nx, u.ny):
        raise GridMismatchError("trace grid does not match operator grid")
    rho = u
    for k in range(1, iters + 1):
        step = grad_F(rho, u, kop, mu, delta).values
        new_vals = rho.values - gamma * step
        if not np.all(np.isfinite(new_vals)):
            raise DivergenceError(f"gradient descent diverged at iteration {k}")
        if tolerance is not None:
            denom = float(np.linalg.norm(rho.values))
            if denom > 0 and float(np.linalg.norm(new_vals - rho.values)) <= tolerance * denom:
                rho = rho.with_values(new_vals)
                break
        rho = rho.with_values(new_vals)
    return rho
