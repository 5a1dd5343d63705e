"""Scan geometry: Lissajous trajectories, rigid motions, multi-patch plans
and frame-of-reference transformations.

Conventions
-----------
* One scan period is normalised to ``T = 1``; all times are in periods.
* A :class:`RigidMotion` is the affine map ``x -> offset + Q(angle) x``
  (counter-clockwise rotation).  Where a motion describes a frame ``k``
  relative to a reference frame, it maps reference coordinates to frame-k
  coordinates: ``x_k = b_k + Q_k x_ref``.
* Scan positions and velocities handed to the reconstruction are expressed
  in the frame of the reconstruction region (the "specimen frame").
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mpscan.errors import OutOfDomainError
from mpscan.grid import Domain, GridSpec
from mpscan.rng import make_rng

DEFAULT_FREQUENCIES = (16, 17)
DEFAULT_PHASES = (np.pi / 2, np.pi / 2)
DEFAULT_SAMPLES_PER_PERIOD = 1632

_TIME_EPS = 1e-9


def rotation(alpha) -> np.ndarray:
    """Rotation matrices for angle(s) ``alpha``; shape ``alpha.shape + (2, 2)``."""
    a = np.asarray(alpha, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.empty(a.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def rotation_rate(alpha, alpha_rate) -> np.ndarray:
    """Time derivative of ``rotation(alpha(t))`` for angular rate ``alpha_rate``."""
    a = np.asarray(alpha, dtype=float)
    w = np.asarray(alpha_rate, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.empty(np.broadcast(a, w).shape + (2, 2))
    out[..., 0, 0] = -s * w
    out[..., 0, 1] = -c * w
    out[..., 1, 0] = c * w
    out[..., 1, 1] = -s * w
    return out


@dataclass(frozen=True)
class LissajousParams:
    """Closed Lissajous figure: amplitudes, integer frequencies, phases and
    the number of samples taken per period."""

    amplitudes: tuple[float, float]
    frequencies: tuple[int, int] = DEFAULT_FREQUENCIES
    phases: tuple[float, float] = DEFAULT_PHASES
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD

    def __post_init__(self):
        ax, ay = self.amplitudes
        mx, my = self.frequencies
        if ax <= 0 or ay <= 0:
            raise ValueError(f"amplitudes must be positive, got {self.amplitudes}")
        if mx == my:
            raise ValueError("frequencies must differ for a space-filling figure")
        if mx <= 0 or my <= 0 or mx != int(mx) or my != int(my):
            raise ValueError(f"frequencies must be positive integers, got {self.frequencies}")
        if self.samples_per_period < 2:
            raise ValueError("need at least two samples per period")


def standard_lissajous(
    amplitudes: tuple[float, float],
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD,
) -> LissajousParams:
    """Default drive-field figure used by all bundled experiments."""
    return LissajousParams(amplitudes=tuple(map(float, amplitudes)),
                           samples_per_period=samples_per_period)


def lissajous(params: LissajousParams, t) -> tuple[np.ndarray, np.ndarray]:
    """Position and analytic velocity of the base figure at time(s) ``t``.

    Components are ``A_i sin(2 pi m_i t + phi_i)`` with exact derivatives
    ``2 pi m_i A_i cos(2 pi m_i t + phi_i)``.
    """
    t = np.asarray(t, dtype=float)
    amp = np.asarray(params.amplitudes)
    m = np.asarray(params.frequencies, dtype=float)
    ph = np.asarray(params.phases)
    arg = 2.0 * np.pi * m * t[..., None] + ph
    pos = amp * np.sin(arg)
    vel = 2.0 * np.pi * m * amp * np.cos(arg)
    return pos, vel


@dataclass(frozen=True)
class RigidMotion:
    """Affine rigid map ``x -> offset + Q(angle) x`` with optional rates."""

    offset: tuple[float, float]
    angle: float = 0.0
    offset_rate: tuple[float, float] = (0.0, 0.0)
    angle_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))
        object.__setattr__(self, "offset_rate", tuple(float(v) for v in self.offset_rate))

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(offset=(0.0, 0.0))

    @property
    def matrix(self) -> np.ndarray:
        return rotation(self.angle)

    @property
    def matrix_rate(self) -> np.ndarray:
        return rotation_rate(self.angle, self.angle_rate)


@dataclass(frozen=True)
class SweepMotion:
    """Linear motion law: offset and angle interpolate affinely over the
    whole acquisition of ``periods`` consecutive scan periods."""

    offset_start: tuple[float, float]
    offset_end: tuple[float, float]
    angle_start: float = 0.0
    angle_end: float = 0.0
    periods: int = 1

    def __post_init__(self):
        if self.periods < 1:
            raise ValueError("sweep needs at least one period")


@dataclass(frozen=True)
class ScanPlan:
    """A multi-patch acquisition: base figure plus either a list of static
    patch motions or a continuous sweep motion."""

    base: LissajousParams
    patches: tuple[RigidMotion, ...] | None = None
    sweep: SweepMotion | None = None
    patch_duration: float = 1.0
    move_time: float = 0.0

    def __post_init__(self):
        if (self.patches is None) == (self.sweep is None):
            raise ValueError("exactly one of patches or sweep must be given")
        if self.patches is not None:
            object.__setattr__(self, "patches", tuple(self.patches))
            if len(self.patches) == 0:
                raise ValueError("patch list is empty")
        if self.patch_duration <= 0 or self.move_time < 0:
            raise ValueError("invalid timing parameters")

    @property
    def kind(self) -> str:
        return "patches" if self.patches is not None else "sweep"

    @property
    def num_patches(self) -> int:
        if self.patches is not None:
            return len(self.patches)
        return self.sweep.periods

    def total_time(self) -> float:
        T, tau = self.patch_duration, self.move_time
        if self.patches is not None:
            n = len(self.patches)
            return n * T + (n - 1) * tau
        return self.sweep.periods * T


def motion_state(plan: ScanPlan, t):
    """Offset, angle and their rates at time(s) ``t``.

    For patch plans the motion is constant on each scanning interval
    ``[xi (T + tau), xi (T + tau) + T]``; times inside a move gap use the
    preceding patch (no samples are generated there).
    """
    t = np.asarray(t, dtype=float)
    T, tau = plan.patch_duration, plan.move_time
    if plan.patches is not None:
        # the interval (xi (T+tau), xi (T+tau) + T] belongs to patch xi; the
        # small shift keeps boundary samples with their own patch
        idx = np.ceil(t / (T + tau) - 1e-12).astype(int) - 1
        idx = np.clip(idx, 0, len(plan.patches) - 1)
        offsets = np.array([p.offset for p in plan.patches])
        angles = np.array([p.angle for p in plan.patches])
        off_rates = np.array([p.offset_rate for p in plan.patches])
        ang_rates = np.array([p.angle_rate for p in plan.patches])
        return offsets[idx], angles[idx], off_rates[idx], ang_rates[idx]
    sw = plan.sweep
    total = plan.total_time()
    frac = t / total
    b0 = np.asarray(sw.offset_start)
    b1 = np.asarray(sw.offset_end)
    b = (1.0 - frac)[..., None] * b0 + frac[..., None] * b1
    b_rate = np.broadcast_to((b1 - b0) / total, b.shape)
    alpha = (1.0 - frac) * sw.angle_start + frac * sw.angle_end
    alpha_rate = np.broadcast_to((sw.angle_end - sw.angle_start) / total, alpha.shape)
    return b, alpha, b_rate, alpha_rate


def generalized_trajectory(plan: ScanPlan, t) -> tuple[np.ndarray, np.ndarray]:
    """Scan position and velocity at time(s) ``t`` in the specimen frame.

    The base figure is carried along by the plan's motion:
    ``pos = b(t) + Q(t) r(t)`` and
    ``vel = b'(t) + Q'(t) r(t) + Q(t) r'(t)`` with all derivatives analytic.
    Raises :class:`OutOfDomainError` for times outside the plan.
    """
    t = np.asarray(t, dtype=float)
    total = plan.total_time()
    if np.any(t < -_TIME_EPS) or np.any(t > total + _TIME_EPS):
        raise OutOfDomainError(f"time outside [0, {total}]")
    r, r_dot = lissajous(plan.base, t)
    b, alpha, b_rate, alpha_rate = motion_state(plan, t)
    q = rotation(alpha)
    q_dot = rotation_rate(alpha, alpha_rate)
    pos = b + np.einsum("...ij,...j->...i", q, r)
    vel = b_rate + np.einsum("...ij,...j->...i", q_dot, r) + np.einsum(
        "...ij,...j->...i", q, r_dot
    )
    return pos, vel


def sample_times(plan: ScanPlan) -> tuple[np.ndarray, np.ndarray]:
    """Sample times ``t_k`` and patch indices over the whole acquisition.

    Each period contributes ``L`` samples at ``t = T k / L``, ``k = 1..L``;
    move gaps contribute none.
    """
    L = plan.base.samples_per_period
    T, tau = plan.patch_duration, plan.move_time
    local = T * np.arange(1, L + 1) / L
    if plan.patches is not None:
        n = len(plan.patches)
        starts = (T + tau) * np.arange(n)
        t = (starts[:, None] + local[None, :]).ravel()
        patch = np.repeat(np.arange(n), L)
        return t, patch
    n = plan.sweep.periods
    k = np.arange(1, n * L + 1)
    t = T * k / L
    patch = (k - 1) // L
    return t, patch


def scan_points(plan: ScanPlan, domain: Domain | None = None):
    """Sample times, patch ids, positions and velocities of a plan.

    When ``domain`` is given, samples whose position falls outside the
    closed rectangle are dropped; the reconstruction stages therefore never
    see out-of-domain points.
    Returns ``(t, patch, pos, vel)`` arrays.
    """
    t, patch = sample_times(plan)
    pos, vel = generalized_trajectory(plan, t)
    if domain is not None:
        a, b, c, d = domain
        keep = (
            (pos[:, 0] >= a) & (pos[:, 0] <= b) & (pos[:, 1] >= c) & (pos[:, 1] <= d)
        )
        t, patch, pos, vel = t[keep], patch[keep], pos[keep], vel[keep]
    return t, patch, pos, vel


def make_grid_plan(
    domain: Domain,
    amplitudes: tuple[float, float],
    nx_patches: int,
    ny_patches: int,
    base: LissajousParams | None = None,
    move_time: float = 0.0,
) -> ScanPlan:
    """Equidistant rectangular multi-patch plan covering ``domain``.

    Patch centers step from ``a + A_x`` to ``b - A_x`` in ``nx_patches``
    stops (and likewise in y); a single stop is centered.  All angles are
    zero.
    """
    a, b, c, d = domain
    GridSpec(1, 1, domain)  # raises on a degenerate rectangle
    ax, ay = amplitudes
    if nx_patches < 1 or ny_patches < 1:
        raise ValueError("need at least one patch per axis")
    if nx_patches > 1 and not b - a > 2 * ax:
        raise ValueError("domain narrower than two amplitudes: x step undefined")
    if ny_patches > 1 and not d - c > 2 * ay:
        raise ValueError("domain narrower than two amplitudes: y step undefined")
    if nx_patches == 1:
        xs = [a + (b - a) / 2]
    else:
        dx = (b - a - 2 * ax) / (nx_patches - 1)
        xs = [a + ax + i * dx for i in range(nx_patches)]
    if ny_patches == 1:
        ys = [c + (d - c) / 2]
    else:
        dy = (d - c - 2 * ay) / (ny_patches - 1)
        ys = [c + ay + j * dy for j in range(ny_patches)]
    patches = tuple(RigidMotion(offset=(x, y)) for x in xs for y in ys)
    base = base or standard_lissajous(amplitudes)
    return ScanPlan(base=base, patches=patches, move_time=move_time)


def make_random_plan(
    domain: Domain,
    amplitudes: tuple[float, float],
    count: int,
    seed: int,
    base: LissajousParams | None = None,
) -> ScanPlan:
    """Plan with patch offsets uniform over ``domain`` and angles uniform
    over ``[0, 2 pi)``; deterministic for a given seed."""
    if count < 1:
        raise ValueError("need at least one patch")
    a, b, c, d = domain
    rng = make_rng(seed)
    offs = np.column_stack([rng.uniform(a, b, count), rng.uniform(c, d, count)])
    angles = rng.uniform(0.0, 2.0 * np.pi, count)
    patches = tuple(
        RigidMotion(offset=tuple(o), angle=float(al)) for o, al in zip(offs, angles)
    )
    base = base or standard_lissajous(amplitudes)
    return ScanPlan(base=base, patches=patches)


def perturb_plan(plan: ScanPlan, pos_frac: float, angle_max: float, seed: int) -> ScanPlan:
    """Randomly shift each patch offset by up to ``pos_frac`` of the figure
    amplitude per axis and each angle by up to ``angle_max`` radians."""
    if pos_frac < 0 or angle_max < 0:
        raise ValueError("perturbation bounds must be non-negative")
    if plan.patches is None:
        raise ValueError("only patch plans can be perturbed")
    ax, ay = plan.base.amplitudes
    rng = make_rng(seed)
    n = len(plan.patches)
    dx = rng.uniform(-pos_frac * ax, pos_frac * ax, n) if pos_frac > 0 else np.zeros(n)
    dy = rng.uniform(-pos_frac * ay, pos_frac * ay, n) if pos_frac > 0 else np.zeros(n)
    da = rng.uniform(-angle_max, angle_max, n) if angle_max > 0 else np.zeros(n)
    patches = tuple(
        replace(p, offset=(p.offset[0] + float(dx[i]), p.offset[1] + float(dy[i])),
                angle=p.angle + float(da[i]))
        for i, p in enumerate(plan.patches)
    )
    return replace(plan, patches=patches)


# ---------------------------------------------------------------------------
# Phase-space samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanSample:
    """One phase-space record: signal, position and velocity at time t."""

    t: float
    s: tuple[float, float]
    r: tuple[float, float]
    v: tuple[float, float]
    patch: int = 0


@dataclass
class ScanData:
    """Column store of scan samples (time, patch, signal, position, velocity)."""

    t: np.ndarray
    patch: np.ndarray
    s: np.ndarray
    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        n = self.t.size
        self.patch = np.asarray(self.patch, dtype=int).reshape(n)
        self.s = np.asarray(self.s, dtype=float).reshape(n, 2)
        self.r = np.asarray(self.r, dtype=float).reshape(n, 2)
        self.v = np.asarray(self.v, dtype=float).reshape(n, 2)

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, k: int) -> ScanSample:
        return ScanSample(
            t=float(self.t[k]),
            s=tuple(self.s[k]),
            r=tuple(self.r[k]),
            v=tuple(self.v[k]),
            patch=int(self.patch[k]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @classmethod
    def from_samples(cls, samples) -> "ScanData":
        if isinstance(samples, ScanData):
            return samples
        samples = list(samples)
        return cls(
            t=np.array([x.t for x in samples]),
            patch=np.array([x.patch for x in samples], dtype=int),
            s=np.array([x.s for x in samples]).reshape(-1, 2),
            r=np.array([x.r for x in samples]).reshape(-1, 2),
            v=np.array([x.v for x in samples]).reshape(-1, 2),
        )

    def sorted_canonical(self) -> "ScanData":
        """Samples sorted by (patch, time, position); reconstruction stages
        accumulate in this order so results do not depend on input order."""
        order = np.lexsort((self.r[:, 1], self.r[:, 0], self.t, self.patch))
        return ScanData(self.t[order], self.patch[order], self.s[order],
                        self.r[order], self.v[order])

    def filtered(self, mask: np.ndarray) -> "ScanData":
        return ScanData(self.t[mask], self.patch[mask], self.s[mask],
                        self.r[mask], self.v[mask])


# ---------------------------------------------------------------------------
# Frame-of-reference transformations
# ---------------------------------------------------------------------------

def _stack_motion(motion, n: int):
    """Offsets, angles and rates as arrays of length n from a single motion
    or a sequence matching the sample count."""
    if isinstance(motion, RigidMotion):
        motion = [motion]
    motions = list(motion)
    if len(motions) == 1:
        motions = motions * n
    if len(motions) != n:
        raise ValueError(f"motion series has {len(motions)} entries for {n} samples")
    b = np.array([m.offset for m in motions])
    alpha = np.array([m.angle for m in motions])
    b_rate = np.array([m.offset_rate for m in motions])
    alpha_rate = np.array([m.angle_rate for m in motions])
    return b, alpha, b_rate, alpha_rate


def _relative_motion(m_to, m_from):
    """Affine map taking frame ``m_from`` coordinates to frame ``m_to``
    coordinates, where both motions map a common reference frame into their
    own frame.  Returns offsets, rotations and their time derivatives."""
    b1, a1, bd1, ad1 = m_to
    b2, a2, bd2, ad2 = m_from
    q1, q2 = rotation(a1), rotation(a2)
    qd1, qd2 = rotation_rate(a1, ad1), rotation_rate(a2, ad2)
    q = np.einsum("nij,nkj->nik", q1, q2)  # Q1 Q2^T
    q_dot = np.einsum("nij,nkj->nik", qd1, q2) + np.einsum("nij,nkj->nik", q1, qd2)
    b = b1 - np.einsum("nij,nj->ni", q, b2)
    b_dot = bd1 - np.einsum("nij,nj->ni", q_dot, b2) - np.einsum("nij,nj->ni", q, bd2)
    return b, q, b_dot, q_dot


def _apply_affine(b, q, b_dot, q_dot, x, v=None):
    y = b + np.einsum("nij,nj->ni", q, x)
    if v is None:
        return y
    vy = b_dot + np.einsum("nij,nj->ni", q_dot, x) + np.einsum("nij,nj->ni", q, v)
    return y, vy


def _invert_affine(b, q, b_dot, q_dot, y, vy=None):
    x = np.einsum("nji,nj->ni", q, y - b)
    if vy is None:
        return x
    vx = np.einsum("nji,nj->ni", q, vy - b_dot - np.einsum("nij,nj->ni", q_dot, x))
    return x, vx


def transform_to_omega_frame(samples, scanner_motion, fov_motion, omega_motion) -> ScanData:
    """Express raw scan records in the specimen (reconstruction) frame.

    The three motions describe the scanner frame, the field-of-view frame
    and the specimen frame relative to a common reference ("the room"):
    ``x_k = b_k + Q_k x_room``.  Each motion may be a single
    :class:`RigidMotion` (static frame) or a sequence with one entry per
    sample.

    The input positions and velocities are the drive-field figure in the
    field-of-view frame (where it has its analytic form); signals are the
    raw coil readings in the scanner frame.  The output carries positions,
    velocities and signals in the specimen frame, obtained by composing the
    field-of-view figure into the scanner frame and then inverting the
    relative scanner/specimen motion in closed form.
    """
    data = ScanData.from_samples(samples)
    n = len(data)
    sm = _stack_motion(scanner_motion, n)
    fm = _stack_motion(fov_motion, n)
    om = _stack_motion(omega_motion, n)
    # field-of-view figure -> scanner coordinates
    r_hat, v_hat = _apply_affine(*_relative_motion(sm, fm), data.r, data.v)
    # scanner coordinates -> specimen coordinates
    rel = _relative_motion(sm, om)
    pos, vel = _invert_affine(*rel, r_hat, v_hat)
    b, q, _, _ = rel
    sig = np.einsum("nji,nj->ni", q, data.s - b)
    return ScanData(data.t, data.patch, sig, pos, vel)


def transform_to_scanner_frame(samples, scanner_motion, fov_motion, omega_motion) -> ScanData:
    """Inverse of :func:`transform_to_omega_frame`: map specimen-frame data
    to raw scanner records (signals in the scanner frame, positions and
    velocities as the base figure in the field-of-view frame)."""
    data = ScanData.from_samples(samples)
    n = len(data)
    sm = _stack_motion(scanner_motion, n)
    fm = _stack_motion(fov_motion, n)
    om = _stack_motion(omega_motion, n)
    rel = _relative_motion(sm, om)
    r_hat, v_hat = _apply_affine(*rel, data.r, data.v)
    b, q, _, _ = rel
    sig = b + np.einsum("nij,nj->ni", q, data.s)
    pos, vel = _invert_affine(*_relative_motion(sm, fm), r_hat, v_hat)
    return ScanData(data.t, data.patch, sig, pos, vel)
