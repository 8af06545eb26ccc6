"""Dot pattern generation, robustness evaluation and optimization.

A pattern is judged by Monte Carlo recognition trials: random view,
visibility cull, per-dot angular noise, recognize, success if the
recovered orientation is within a gate of the truth. The optimizer
instead maximizes the mean nearest-neighbor distance between hash-space
features, which is cheap, differentiable (through a soft-min) and a good
proxy for that success rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .errors import InfeasibleSeparation, NoBasisAboveThreshold, TooFewDots
from .geometry import Rotation, geodesic_angle, random_rotation
from .hashing import (
    DotPattern,
    ObservedDotSet,
    RecognitionConfig,
    build_hash_table,
    recognize,
)
from .kent import ScoringParams

_RESAMPLE_CAP = 10_000


def random_pattern(n: int, min_separation: float, rng: np.random.Generator) -> DotPattern:
    """n uniform sphere dots, rejection-resampled to a minimum separation."""
    if n < 2:
        raise TooFewDots("patterns need at least 2 dots")
    accepted: list[np.ndarray] = []
    rejects = 0
    while len(accepted) < n:
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        if accepted and min_separation > 0:
            cosang = np.clip(np.array(accepted) @ v, -1.0, 1.0)
            if np.arccos(cosang).min() < min_separation:
                rejects += 1
                if rejects > _RESAMPLE_CAP:
                    raise InfeasibleSeparation(
                        f"could not place {n} dots {min_separation:.3f} rad apart")
                continue
        accepted.append(v)
    return DotPattern(np.array(accepted))


def perturb_dot(d: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate ``d`` about a random orthogonal axis by an angle |N(0, sigma)|."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    d = np.asarray(d, dtype=float)
    if sigma == 0.0:
        return d.copy()
    while True:
        v = rng.normal(size=3)
        v -= np.dot(v, d) * d
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            break
    axis = v / norm
    angle = abs(rng.normal(0.0, sigma))
    # Rodrigues with axis orthogonal to d (the axis.(axis.d) term vanishes)
    out = d * math.cos(angle) + np.cross(axis, d) * math.sin(angle)
    return out / np.linalg.norm(out)


def visible_dots(pattern: DotPattern, r: Rotation, threshold: float = 0.0):
    """Indices and rotated positions of the dots with z above ``threshold``."""
    rotated = r.apply(pattern.dots)
    idx = np.nonzero(rotated[:, 2] > threshold)[0]
    return idx, rotated[idx]


# --- spherical parameterization (used by the optimizer) -----------------

def to_spherical(dots: np.ndarray) -> np.ndarray:
    """(n, 3) unit vectors -> (n, 2) [theta, phi] with theta in [0, pi]."""
    theta = np.arccos(np.clip(dots[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(dots[:, 1], dots[:, 0]), 2.0 * math.pi)
    return np.column_stack([theta, phi])


def from_spherical(coords: np.ndarray) -> np.ndarray:
    theta, phi = coords[:, 0], coords[:, 1]
    st = np.sin(theta)
    return np.column_stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


# --- objectives ----------------------------------------------------------

def _hash_values_of(dots: np.ndarray) -> np.ndarray:
    # Same construction as build_hash_table, without the bookkeeping.
    n = len(dots)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = ii != jj
    pi, pj = ii[mask], jj[mask]
    cross = np.cross(dots[pi], dots[pj])
    keep = np.linalg.norm(cross, axis=1) >= 1e-6
    pi, pj, cross = pi[keep], pj[keep], cross[keep]
    bases = np.stack([dots[pi], dots[pj], cross], axis=2)
    inv = np.linalg.inv(bases)
    all_k = np.arange(n)
    third = np.array([all_k[(all_k != i) & (all_k != j)] for i, j in zip(pi, pj)])
    return np.einsum("pab,pkb->pka", inv, dots[third]).reshape(-1, 3)


def hash_space_nn_objective(pattern: DotPattern) -> float:
    """Mean distance from each hash-space feature to its nearest neighbor."""
    if len(pattern) < 3:
        raise TooFewDots("objective needs at least 3 dots")
    values = _hash_values_of(pattern.dots)
    tree = cKDTree(values)
    dist, _ = tree.query(values, k=2)
    return float(np.mean(dist[:, 1]))


def _soft_nn_objective(dots: np.ndarray, temperature: float,
                       candidates: np.ndarray | None = None,
                       n_candidates: int = 8,
                       cap: float = math.inf) -> float:
    """Soft-min variant of the NN objective (log-sum-exp over neighbors).

    When ``candidates`` is given (indices of shape (m, c)), the soft-min
    runs over that fixed neighbor set; otherwise neighbors are looked up
    fresh. Per-entry distances are clipped at ``cap`` so entries flung
    far out by a nearly degenerate basis cannot dominate the mean. As
    temperature -> inf (and with cap = inf) this approaches the hard
    objective.
    """
    values = _hash_values_of(dots)
    if candidates is None:
        tree = cKDTree(values)
        _, idx = tree.query(values, k=n_candidates + 1)
        candidates = idx[:, 1:]
    diffs = values[:, None, :] - values[candidates]
    d = np.linalg.norm(diffs, axis=2)
    softmin = -logsumexp(-temperature * d, axis=1) / temperature
    if np.isfinite(cap):
        softmin = np.minimum(softmin, cap)
    return float(np.mean(softmin))


# --- Monte Carlo evaluation ----------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    """Protocol knobs for the Monte Carlo robustness benchmark."""

    seed: int = 0
    success_gate: float = math.radians(20.0)
    visibility_threshold: float = 0.0
    scoring: ScoringParams = field(default_factory=ScoringParams)
    recognition: RecognitionConfig = field(default_factory=RecognitionConfig)


@dataclass(frozen=True)
class PatternEvalReport:
    """Aggregate outcome of the Monte Carlo benchmark.

    ``success_rate`` is over eligible trials (those with >= 3 visible
    dots); trials culled below that are reported separately under
    ``failure_count_by_cause["insufficient_dots"]`` since they measure
    pattern coverage rather than hashing robustness.
    """

    success_rate: float
    trials: int
    eligible: int
    noise_sigma: float                      # degrees
    mean_orientation_error: float           # radians, over successful trials
    failure_count_by_cause: dict[str, int]


def evaluate_pattern(pattern: DotPattern, trials: int, sigma: float,
                     cfg: EvalConfig | None = None,
                     table=None) -> PatternEvalReport:
    """Run ``trials`` recognition trials with per-dot noise ``sigma`` (radians).

    Per-trial RNG streams are derived from ``cfg.seed`` and the trial
    index, so results do not depend on evaluation order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or EvalConfig()
    if table is None:
        table = build_hash_table(pattern, cfg.scoring)

    successes = 0
    eligible = 0
    err_sum = 0.0
    causes = {"insufficient_dots": 0, "no_basis": 0, "wrong_orientation": 0}
    for trial in range(trials):
        rng = np.random.default_rng([cfg.seed, trial])
        r_true = random_rotation(rng)
        _, vis = visible_dots(pattern, r_true, cfg.visibility_threshold)
        if len(vis) < 3:
            causes["insufficient_dots"] += 1
            continue
        eligible += 1
        if sigma > 0:
            vis = np.array([perturb_dot(v, sigma, rng) for v in vis])
            vis[:, 2] = np.abs(vis[:, 2])   # measurement stays viewer-side
        obs = ObservedDotSet(vis)
        try:
            result = recognize(table, obs, cfg.recognition)
        except NoBasisAboveThreshold:
            causes["no_basis"] += 1
            continue
        err = geodesic_angle(result.orientation, r_true)
        if err < cfg.success_gate:
            successes += 1
            err_sum += err
        else:
            causes["wrong_orientation"] += 1

    return PatternEvalReport(
        success_rate=successes / eligible if eligible else 0.0,
        trials=trials,
        eligible=eligible,
        noise_sigma=math.degrees(sigma),
        mean_orientation_error=err_sum / successes if successes else float("nan"),
        failure_count_by_cause=causes,
    )


# --- optimizer ------------------------------------------------------------

def _degeneracy_margin(dots: np.ndarray) -> float:
    """Smallest angular distance of any dot pair from 0 or pi.

    Both coincident and antipodal pairs collapse the pair basis (the
    cross product vanishes), which sends hash features off to infinity
    and spuriously inflates the nearest-neighbor objective.
    """
    cosang = np.clip(dots @ dots.T, -1.0, 1.0)
    iu = np.triu_indices(len(dots), k=1)
    ang = np.arccos(cosang[iu])
    return float(np.minimum(ang, math.pi - ang).min())


def _feasible_random_pattern(n: int, margin: float,
                             rng: np.random.Generator) -> np.ndarray:
    for _ in range(500):
        dots = random_pattern(n, margin, rng).dots
        if _degeneracy_margin(dots) >= margin:
            return dots.copy()
    raise InfeasibleSeparation(
        f"no {n}-dot start with all pairs {margin:.2f} rad away from 0 and pi")


def optimize_pattern(n: int, iterations: int = 150,
                     rng: np.random.Generator | None = None,
                     initial_step: float = 0.05,
                     temperature: float = 50.0,
                     min_separation: float = 0.2,
                     n_candidates: int = 8,
                     restarts: int = 1,
                     init: DotPattern | None = None) -> DotPattern:
    """Gradient-ascent search for a pattern with well-spread hash features.

    Works on the dots' spherical coordinates with central-difference
    gradients of the soft-min objective; neighbor candidate sets are
    frozen per iteration so a gradient costs O(4n) cheap evaluations.
    Steps are accepted by backtracking line search on the fresh soft
    objective, and every dot pair must stay ``min_separation`` away from
    both coincidence and antipodality, where the pair basis degenerates
    and the raw objective diverges. The best pattern seen, measured by
    the hard objective, is returned.
    """
    if n < 4:
        raise TooFewDots("optimization needs at least 4 dots")
    if rng is None:
        rng = np.random.default_rng(0)
    fd_h = 1e-5

    best_dots = None
    best_hard = -math.inf

    for _ in range(max(1, restarts)):
        if init is not None:
            dots = init.dots.copy()
        else:
            dots = _feasible_random_pattern(n, min_separation, rng)
        # random recentering keeps dots away from the theta in {0, pi}
        # coordinate singularity at the start of each restart
        dots = random_rotation(rng).apply(dots)
        coords = to_spherical(dots)
        sep_gate = min(min_separation, _degeneracy_margin(dots))

        hard = hash_space_nn_objective(DotPattern(from_spherical(coords)))
        if hard > best_hard:
            best_hard, best_dots = hard, from_spherical(coords)

        step = initial_step
        for _ in range(iterations):
            base_dots = from_spherical(coords)
            values = _hash_values_of(base_dots)
            tree = cKDTree(values)
            dist, idx = tree.query(values, k=n_candidates + 1)
            frozen = idx[:, 1:]
            # cap relative to the bulk scale: keeps entries pushed far out
            # by ill-conditioned bases from steering the search
            cap = 8.0 * float(np.median(dist[:, 1]))

            grad = np.zeros_like(coords)
            for d in range(n):
                for c in range(2):
                    probe = coords.copy()
                    probe[d, c] += fd_h
                    up = _soft_nn_objective(from_spherical(probe), temperature,
                                            frozen, cap=cap)
                    probe[d, c] -= 2 * fd_h
                    dn = _soft_nn_objective(from_spherical(probe), temperature,
                                            frozen, cap=cap)
                    grad[d, c] = (up - dn) / (2 * fd_h)

            gn = np.linalg.norm(grad)
            if gn < 1e-12:
                break
            direction = grad / gn
            current = _soft_nn_objective(base_dots, temperature,
                                         n_candidates=n_candidates, cap=cap)
            accepted = False
            trial_step = step
            for _ in range(8):
                cand_coords = coords + trial_step * direction
                cand_dots = from_spherical(cand_coords)
                if _degeneracy_margin(cand_dots) < sep_gate:
                    trial_step *= 0.5
                    continue
                cand_val = _soft_nn_objective(cand_dots, temperature,
                                              n_candidates=n_candidates, cap=cap)
                if cand_val > current:
                    coords, current = cand_coords, cand_val
                    step = min(trial_step * 1.5, 0.25)
                    accepted = True
                    break
                trial_step *= 0.5
            if not accepted:
                step = max(step * 0.5, 1e-4)
                continue
            hard = hash_space_nn_objective(DotPattern(from_spherical(coords)))
            if hard > best_hard:
                best_hard, best_dots = hard, from_spherical(coords)

    return DotPattern(best_dots)
