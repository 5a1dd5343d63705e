"""Iterative solvers shared by the reconstruction stages.

All solvers are matrix-free: linear operators are passed as callables on
flat arrays.  Every routine is deterministic for fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mpscan.errors import DivergenceError
from mpscan.rng import make_rng


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    residual_history: list = field(default_factory=list)


def conjugate_gradient(apply_a, b, x0=None, max_iters=1000, tol=1e-12,
                       callback=None) -> CGResult:
    """Conjugate gradients for a symmetric positive (semi)definite operator.

    Stops when the residual norm drops below ``tol * ||b||`` or after
    ``max_iters`` iterations.  ``callback(x)`` is invoked after every
    update.  Raises :class:`DivergenceError` on non-finite iterates.
    """
    b = np.asarray(b, dtype=float).ravel()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).ravel()
    r = b - apply_a(x) if x.any() else b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = tol * float(np.linalg.norm(b))
    history = [np.sqrt(rs)]
    k = 0
    while k < max_iters and np.sqrt(rs) > target:
        ap = apply_a(p)
        denom = float(p @ ap)
        if denom <= 0:
            # numerically null direction; the iterate is already optimal
            # along it and further progress is noise
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise DivergenceError(f"conjugate gradient diverged at iteration {k}")
        p = r + (rs_new / rs) * p
        rs = rs_new
        history.append(np.sqrt(rs))
        k += 1
        if callback is not None:
            callback(x)
    return CGResult(x=x, iterations=k, residual_norm=float(np.sqrt(rs)),
                    converged=np.sqrt(rs) <= target, residual_history=history)


def power_iteration(apply_a, n, iters=100, tol=1e-8, seed=0) -> float:
    """Largest eigenvalue estimate of a symmetric PSD operator.

    Runs at most ``iters`` iterations from a seeded random start, stopping
    early when the Rayleigh quotient is stable to relative ``tol``.
    """
    rng = make_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply_a(v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        lam_new = float(v @ w)
        v = w / norm
        if lam > 0 and abs(lam_new - lam) <= tol * lam:
            lam = lam_new
            break
        lam = lam_new
    return float(lam)


@dataclass
class GFBResult:
    x: np.ndarray
    iterations: int
    relative_residual: float
    converged: bool
    objective_initial: float
    objective_final: float
    objective_trace: list = field(default_factory=list)


def generalized_forward_backward(
    x0,
    grad,
    prox1,
    prox2,
    gamma,
    relaxation=1.0,
    tol=5e-6,
    max_iters=100_000,
    objective=None,
    track_every=100,
) -> GFBResult:
    """Two-prox generalized forward-backward splitting.

    Maintains auxiliary variables ``z1, z2`` (both initialised at ``x0``)
    and iterates::

        z_i += relaxation * (prox_i(2 x - z_i - gamma * grad(x)) - x)
        x = (z1 + z2) / 2

    stopping when ``|x_new - x| / |x|`` falls below ``tol`` (exactly 0 when
    both vanish) or after ``max_iters`` iterations.  The objective, when
    given, is recorded every ``track_every`` iterations.
    """
    x = np.array(x0, dtype=float)
    z1 = x.copy()
    z2 = x.copy()
    obj0 = float(objective(x)) if objective is not None else np.nan
    trace = [(0, obj0)] if objective is not None else []
    rel = np.inf
    k = 0
    for k in range(1, max_iters + 1):
        g = grad(x)
        step = 2.0 * x - gamma * g
        z1 = z1 + relaxation * (prox1(step - z1) - x)
        z2 = z2 + relaxation * (prox2(step - z2) - x)
        x_new = 0.5 * (z1 + z2)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"forward-backward iteration {k} produced non-finite values")
        delta = float(np.linalg.norm(x_new - x))
        denom = float(np.linalg.norm(x))
        rel = 0.0 if (delta == 0.0 and denom == 0.0) else (
            np.inf if denom == 0.0 else delta / denom
        )
        x = x_new
        if objective is not None and k % track_every == 0:
            trace.append((k, float(objective(x))))
        if rel <= tol:
            break
    obj1 = float(objective(x)) if objective is not None else np.nan
    if objective is not None and (not trace or trace[-1][0] != k):
        trace.append((k, obj1))
    return GFBResult(x=x, iterations=k, relative_residual=rel, converged=rel <= tol,
                     objective_initial=obj0, objective_final=obj1, objective_trace=trace)
