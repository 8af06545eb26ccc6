"""Rotations as unit quaternions plus the Kabsch best-fit solver.

Conventions used throughout the library:

* quaternions are scalar-first ``(w, x, y, z)`` and canonicalized to
  ``w >= 0``, so ``q`` and ``-q`` collapse to one representative;
* vectors are numpy float arrays of shape ``(3,)`` or batches ``(n, 3)``;
* all angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, LengthMismatch

_TWO_PI = 2.0 * math.pi


def unit_vector(v) -> np.ndarray:
    """Normalize ``v`` to unit length, returned as a float64 ``(3,)`` array."""
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize a near-zero vector")
    return v / n


@dataclass(frozen=True)
class Rotation:
    """A 3D rotation stored as a canonical unit quaternion.

    The constructor accepts any non-zero length-4 sequence, normalizes it
    and flips the sign so that ``w >= 0`` (ties on ``w == 0`` are broken by
    the first non-zero vector component).
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4).copy()
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero-norm quaternion")
        q /= n
        flip = q[0] < 0.0
        if q[0] == 0.0:
            nz = np.nonzero(q)[0]
            flip = q[nz[0]] < 0.0 if len(nz) else False
        if flip:
            q = -q
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    # --- constructors -------------------------------------------------

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = unit_vector(axis)
        half = 0.5 * angle
        return cls(np.concatenate(([math.cos(half)], math.sin(half) * axis)))

    @classmethod
    def from_rotvec(cls, v) -> "Rotation":
        """Exponential map: rotation by ``||v||`` radians about ``v``."""
        v = np.asarray(v, dtype=float).reshape(3)
        angle = np.linalg.norm(v)
        if angle < 1e-12:
            # sin(a/2)/a -> 1/2 as a -> 0
            return cls(np.concatenate(([1.0], 0.5 * v)))
        return cls(np.concatenate(([math.cos(0.5 * angle)],
                                   (math.sin(0.5 * angle) / angle) * v)))

    @classmethod
    def _from_matrix(cls, m: np.ndarray) -> "Rotation":
        # Shepperd's method: pick the largest of the four diagonal branches.
        m = np.asarray(m, dtype=float)
        t = np.trace(m)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = [0.25 * s,
                 (m[2, 1] - m[1, 2]) / s,
                 (m[0, 2] - m[2, 0]) / s,
                 (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = [(m[2, 1] - m[1, 2]) / s,
                 0.25 * s,
                 (m[0, 1] + m[1, 0]) / s,
                 (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = [(m[0, 2] - m[2, 0]) / s,
                 (m[0, 1] + m[1, 0]) / s,
                 0.25 * s,
                 (m[1, 2] + m[2, 1]) / s]
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = [(m[1, 0] - m[0, 1]) / s,
                 (m[0, 2] + m[2, 0]) / s,
                 (m[1, 2] + m[2, 1]) / s,
                 0.25 * s]
        return cls(np.array(q))

    # --- representation -----------------------------------------------

    def _as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def to_axis_angle(self) -> "AxisAngle":
        w, xyz = self.q[0], self.q[1:]
        s = np.linalg.norm(xyz)
        angle = 2.0 * math.atan2(s, w)  # in [0, pi] because w >= 0
        if s < 1e-12:
            return AxisAngle(np.array([1.0, 0.0, 0.0]), 0.0)
        return AxisAngle(xyz / s, angle)

    def to_rotvec(self) -> np.ndarray:
        aa = self.to_axis_angle()
        return aa.axis * aa.angle

    # --- algebra --------------------------------------------------------

    def __mul__(self, other: "Rotation") -> "Rotation":
        """Composition: ``(a * b).apply(v) == a.apply(b.apply(v))``."""
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v) -> np.ndarray:
        """Rotate a single vector ``(3,)`` or a batch ``(n, 3)``."""
        v = np.asarray(v, dtype=float)
        m = self._as_matrix()
        if v.ndim == 1:
            return m @ v
        return v @ m.T


@dataclass(frozen=True)
class AxisAngle:
    """Axis-angle form of a rotation; ``angle`` is in ``[0, pi]``."""

    axis: np.ndarray
    angle: float

    def to_rotation(self) -> Rotation:
        return Rotation.from_axis_angle(self.axis, self.angle)


def rotate(r: Rotation, v) -> np.ndarray:
    """Apply rotation ``r`` to vector(s) ``v``."""
    return r.apply(v)


def geodesic_angle(a: Rotation, b: Rotation) -> float:
    """Geodesic distance between two rotations, in radians.

    Equals ``2*arccos(|<a, b>|)`` but is evaluated through the relative
    rotation's axis-angle form, which keeps precision near zero.
    """
    rel = a.inverse() * b
    w, xyz = rel.q[0], rel.q[1:]
    return 2.0 * math.atan2(np.linalg.norm(xyz), abs(w))


def random_rotation(rng: np.random.Generator) -> Rotation:
    """Draw a rotation uniformly on SO(3) (Shoemake's subgroup method)."""
    u1, u2, u3 = rng.random(3)
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    return Rotation(np.array([
        b * math.cos(_TWO_PI * u3),
        a * math.sin(_TWO_PI * u2),
        a * math.cos(_TWO_PI * u2),
        b * math.sin(_TWO_PI * u3),
    ]))


def kabsch(reference, observed) -> Rotation:
    """Best-fit rotation taking ``reference`` onto ``observed``.

    Solves ``argmin_R sum_i ||R @ ref_i - obs_i||^2`` over proper rotations
    via SVD of the cross-covariance; a reflection solution is corrected by
    flipping the sign of the smallest singular direction. Both inputs are
    direction sets about a common origin, so no centroid is subtracted.

    Raises:
        LengthMismatch: the two sets differ in length.
        DegenerateConfiguration: fewer than 2 points, or all points
            (nearly) collinear so the rotation about that axis is free.
    """
    p = np.asarray(reference, dtype=float).reshape(-1, 3)
    q = np.asarray(observed, dtype=float).reshape(-1, 3)
    if len(p) != len(q):
        raise LengthMismatch(f"{len(p)} reference vs {len(q)} observed points")
    if len(p) < 2:
        raise DegenerateConfiguration("need at least 2 corresponded points")
    h = p.T @ q
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12:
        raise DegenerateConfiguration("points are collinear; rotation underdetermined")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Rotation._from_matrix(r)
