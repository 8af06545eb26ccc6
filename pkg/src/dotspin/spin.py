"""Spin regression from orientation sequences.

A ball spinning at constant angular velocity traces a great circle in
quaternion space: all its orientation quaternions lie in one 2D plane.
The fit recovers that plane by SVD, reads the spin axis off the plane's
basis, and regresses the in-plane angle against time. The in-plane angle
advances at half the rotation rate (quaternion double cover), so the
regression slope is doubled.

Sign-aligning consecutive quaternions caps the per-step plane angle at
pi/2, which is what limits the measurable spin to half the frame rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConsensus,
    NonPositiveNorm,
    NonUniqueAxis,
    TooFewSamples,
)
from .geometry import Rotation, geodesic_angle

_PLANE_RATIO_MIN = 3.0


@dataclass(frozen=True)
class OrientationSample:
    """One timestamped orientation, optionally with its recognition rmse."""

    t: float
    q: Rotation
    quality: float | None = None


@dataclass(frozen=True)
class SpinEstimate:
    omega: np.ndarray                      # rad/s, axis * magnitude
    inliers: tuple[int, ...]
    residual_rms: float                    # radians
    plane_singular_values: np.ndarray      # 4 non-negative reals


@dataclass(frozen=True)
class DampeningFit:
    coefficient: float                     # decay rate k in w(t) = w0 * exp(-k t)
    omega0: float                          # rad/s
    r2: float
    n: int


def propagate_orientation(q0: Rotation, omega, dt: float) -> Rotation:
    """Orientation after spinning at constant ``omega`` for ``dt`` seconds."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    return Rotation.from_rotvec(omega * dt) * q0


def finite_difference_spin(a: OrientationSample, b: OrientationSample) -> np.ndarray:
    """Angular velocity from two orientations: axis-angle of b*a^-1 over dt.

    Exact below the per-step wrap limit ``||omega|| * dt < pi``.
    """
    if b.t <= a.t:
        raise ValueError("second sample must be later than the first")
    aa = (b.q * a.q.inverse()).to_axis_angle()
    return aa.axis * (aa.angle / (b.t - a.t))


def unwrap_angles(angles) -> np.ndarray:
    """Remove 2*pi jumps: successive differences mapped into (-pi, pi]."""
    return np.unwrap(np.asarray(angles, dtype=float))


def _aligned_quaternion_rows(samples) -> np.ndarray:
    rows = np.array([s.q.q for s in samples])
    for i in range(1, len(rows)):
        if np.dot(rows[i], rows[i - 1]) < 0.0:
            rows[i] = -rows[i]
    return rows


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def _validate_samples(samples) -> list[OrientationSample]:
    samples = list(samples)
    if len(samples) < 3:
        raise TooFewSamples(f"spin fit needs >= 3 samples, got {len(samples)}")
    t = np.array([s.t for s in samples])
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    return samples


def quatera_fit(samples) -> SpinEstimate:
    """Fit a constant spin to an orientation sequence.

    Raises NonUniqueAxis when the quaternion rows do not single out a
    rotation plane (second/third singular value ratio below 3), which is
    what happens for near-zero spin or all-identical orientations.
    """
    samples = _validate_samples(samples)
    t = np.array([s.t for s in samples])
    rows = _aligned_quaternion_rows(samples)

    _, sv, vt = np.linalg.svd(rows, full_matrices=True)
    padded = np.zeros(4)
    padded[:len(sv)] = sv
    if padded[1] < 1e-12 * max(padded[0], 1e-300):
        raise NonUniqueAxis("quaternion rows are rank deficient; no rotation plane")
    if padded[1] / max(padded[2], 1e-300) < _PLANE_RATIO_MIN:
        raise NonUniqueAxis("rotation plane is not unique (sigma2 ~ sigma3)")

    v1, v2 = vt[0], vt[1]
    w = _quat_mul(v2, np.array([v1[0], -v1[1], -v1[2], -v1[3]]))
    axis = w[1:]
    axis_norm = np.linalg.norm(axis)
    if axis_norm < 1e-9:
        raise NonUniqueAxis("plane basis does not define a rotation axis")
    axis = axis / axis_norm

    theta = unwrap_angles(np.arctan2(rows @ v2, rows @ v1))
    slope, intercept = np.polyfit(t, theta, 1)
    omega = 2.0 * slope * axis             # quaternion angle runs at half rate

    fitted = np.outer(np.cos(slope * t + intercept), v1) \
        + np.outer(np.sin(slope * t + intercept), v2)
    residuals = [geodesic_angle(Rotation(f), s.q) for f, s in zip(fitted, samples)]
    rms = float(np.sqrt(np.mean(np.square(residuals))))

    return SpinEstimate(
        omega=omega,
        inliers=tuple(range(len(samples))),
        residual_rms=rms,
        plane_singular_values=padded,
    )


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 100
    inlier_gate_rad: float = math.radians(5.0)
    min_inliers: int | None = None          # default max(4, ceil(n/2))
    seed: int = 0
    confidence: float = 0.999


def ransac_spin(samples, cfg: RansacConfig | None = None) -> SpinEstimate:
    """Robust spin fit: RANSAC over minimal 3-sample subsets.

    A hypothesis is scored by how many samples it predicts within the
    inlier gate when propagated from the subset's earliest sample; the
    consensus-maximal hypothesis is refit on all of its inliers.
    Iteration stops early once the consensus makes further improvement
    statistically pointless (standard adaptive termination).
    """
    samples = _validate_samples(samples)
    cfg = cfg or RansacConfig()
    n = len(samples)
    min_inliers = cfg.min_inliers if cfg.min_inliers is not None else max(4, math.ceil(n / 2))
    rng = np.random.default_rng(cfg.seed)
    t = np.array([s.t for s in samples])

    best_mask = None
    best_count = 0
    it = 0
    max_iter = cfg.iterations
    while it < max_iter:
        it += 1
        idx = np.sort(rng.choice(n, size=3, replace=False))
        try:
            model = quatera_fit([samples[i] for i in idx])
        except NonUniqueAxis:
            continue
        q0, t0 = samples[idx[0]].q, t[idx[0]]
        errs = np.array([
            geodesic_angle(propagate_orientation(q0, model.omega, ti - t0), s.q)
            for ti, s in zip(t, samples)
        ])
        mask = errs < cfg.inlier_gate_rad
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            if count == n:
                break
            # adaptive iteration bound at the configured confidence
            w = count / n
            p_good = w ** 3
            if 0 < p_good < 1:
                needed = math.log(1.0 - cfg.confidence) / math.log(1.0 - p_good)
                max_iter = min(max_iter, it + int(math.ceil(needed)))

    if best_mask is None or best_count < min_inliers:
        raise NoConsensus(
            f"best consensus {best_count}/{n} below min_inliers={min_inliers}")

    inlier_idx = tuple(int(i) for i in np.nonzero(best_mask)[0])
    refit = quatera_fit([samples[i] for i in inlier_idx])
    return SpinEstimate(
        omega=refit.omega,
        inliers=inlier_idx,
        residual_rms=refit.residual_rms,
        plane_singular_values=refit.plane_singular_values,
    )


def theoretical_dampening(nu: float, r: float, m: float) -> float:
    """Decay rate of a spinning hollow ball from air's viscous torque.

    ``nu`` is the air viscosity in kg/(m s), ``r`` the ball radius in
    meters and ``m`` its mass in kg; returns 12*pi*nu*r/m in 1/s.
    """
    if nu < 0 or r <= 0 or m <= 0:
        raise ValueError("viscosity must be >= 0 and radius/mass positive")
    return 12.0 * math.pi * nu * r / m


def dampening_fit(norm_series) -> DampeningFit:
    """Log-linear fit of ||omega||(t) = omega0 * exp(-k t).

    Fits log-norm against time by least squares; the decay coefficient is
    the negated slope. A constant series has an undefined r^2, reported
    as 0.
    """
    pts = [(float(t), float(w)) for t, w in norm_series]
    if len(pts) < 3:
        raise TooFewSamples("dampening fit needs >= 3 points")
    t = np.array([p[0] for p in pts])
    w = np.array([p[1] for p in pts])
    if np.any(w <= 0):
        raise NonPositiveNorm("spin norms must be strictly positive")
    y = np.log(w)
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 0.0 if ss_tot <= 1e-30 else max(0.0, 1.0 - ss_res / ss_tot)
    return DampeningFit(
        coefficient=float(-slope),
        omega0=float(np.exp(intercept)),
        r2=r2,
        n=len(pts),
    )


def linear_dampening_fit(norm_series) -> DampeningFit:
    """First-order variant: fit ||omega|| ~ w0 * (1 - k t) directly.

    Valid for k*t << 1; kept for comparison with the log-linear fit.
    """
    pts = [(float(t), float(w)) for t, w in norm_series]
    if len(pts) < 3:
        raise TooFewSamples("dampening fit needs >= 3 points")
    t = np.array([p[0] for p in pts])
    w = np.array([p[1] for p in pts])
    if np.any(w <= 0):
        raise NonPositiveNorm("spin norms must be strictly positive")
    slope, intercept = np.polyfit(t, w, 1)
    if intercept <= 0:
        raise NonPositiveNorm("linear fit produced a non-positive omega0")
    resid = w - (slope * t + intercept)
    ss_tot = float(np.sum((w - w.mean()) ** 2))
    r2 = 0.0 if ss_tot <= 1e-30 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    return DampeningFit(
        coefficient=float(-slope / intercept),
        omega0=float(intercept),
        r2=r2,
        n=len(pts),
    )
