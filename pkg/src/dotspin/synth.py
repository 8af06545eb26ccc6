"""Synthetic dot observations with known ground truth.

Stands in for the camera/detector front end: frames are dot coordinate
sets, not images. Noise model per frame: rotate the pattern, cull to the
visible hemisphere, perturb each dot by a small random rotation, drop
dots at random, and add Poisson-distributed spurious detections (the
kind a partially visible logo produces).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Rotation, unit_vector
from .hashing import DotPattern, ObservedDotSet
from .pattern import perturb_dot
from .spin import propagate_orientation


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0              # radians, per-dot angular perturbation
    dropout_prob: float = 0.0
    spurious_rate: float = 0.0      # expected extra dots per frame
    seed: int = 0
    visibility_threshold: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")
        if self.spurious_rate < 0:
            raise ValueError("spurious_rate must be >= 0")


@dataclass(frozen=True)
class GroundTruthFrame:
    t: float
    q_true: Rotation
    visible_ids: tuple[int, ...]    # pattern indices present in `observed`
    observed: ObservedDotSet


def generate_observation(pattern: DotPattern, q: Rotation,
                         noise: NoiseConfig,
                         rng: np.random.Generator,
                         t: float = 0.0) -> GroundTruthFrame:
    """One synthetic frame of the pattern seen under orientation ``q``.

    ``visible_ids`` lists, in order, the pattern indices of the dots that
    survived the visibility cull and dropout; spurious dots are appended
    after them in ``observed``.
    """
    rotated = q.apply(pattern.dots)
    ids = np.nonzero(rotated[:, 2] > noise.visibility_threshold)[0]

    kept_ids: list[int] = []
    dots: list[np.ndarray] = []
    for i in ids:
        if noise.dropout_prob > 0 and rng.random() < noise.dropout_prob:
            continue
        d = rotated[i]
        if noise.sigma > 0:
            d = perturb_dot(d, noise.sigma, rng)
            # a real detection is an image-plane point: lifting mirrors any
            # dot the noise pushed past the limb back to the near side
            d = np.array([d[0], d[1], abs(d[2])])
        kept_ids.append(int(i))
        dots.append(d)

    n_spurious = int(rng.poisson(noise.spurious_rate)) if noise.spurious_rate > 0 else 0
    for _ in range(n_spurious):
        v = unit_vector(rng.normal(size=3))
        dots.append(np.array([v[0], v[1], abs(v[2])]))

    observed = ObservedDotSet(np.array(dots).reshape(-1, 3), timestamp=t)
    return GroundTruthFrame(t=t, q_true=q, visible_ids=tuple(kept_ids),
                            observed=observed)


def generate_sequence(pattern: DotPattern, q0: Rotation, omega,
                      fps: float, n_frames: int,
                      noise: NoiseConfig,
                      dampening: float | None = None,
                      rng: np.random.Generator | None = None) -> list[GroundTruthFrame]:
    """Frames of a spinning ball at t = i / fps.

    With ``dampening`` set, the spin magnitude decays as
    ``exp(-dampening * t)`` around a fixed axis; the rotation angle uses
    the analytically integrated magnitude so frames stay exactly on the
    decaying-spin trajectory.

    Per-frame RNG streams are derived up front, so frame i is the same
    regardless of the order frames are generated in.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if n_frames < 1:
        raise ValueError("need at least one frame")
    omega = np.asarray(omega, dtype=float).reshape(3)
    if rng is None:
        seeds = [[noise.seed, i] for i in range(n_frames)]
    else:
        root = rng.integers(0, 2 ** 62, size=1)[0]
        seeds = [[int(root), i] for i in range(n_frames)]

    mag = float(np.linalg.norm(omega))
    axis = omega / mag if mag > 0 else np.zeros(3)

    frames = []
    for i in range(n_frames):
        t = i / fps
        if dampening is None or mag == 0.0:
            q = propagate_orientation(q0, omega, t)
        else:
            angle = mag * (1.0 - np.exp(-dampening * t)) / dampening
            q = Rotation.from_rotvec(axis * angle) * q0
        frame_rng = np.random.default_rng(seeds[i])
        frames.append(generate_observation(pattern, q, noise, frame_rng, t=t))
    return frames
