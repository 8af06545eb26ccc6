"""Geometric hashing over sphere dots: table build and Bayesian recognition.

The hash table stores, for every ordered pair of reference dots (d, d'),
every remaining dot expressed in the frame B = [d, d', d x d']. Those
coordinates are invariant to how the ball is oriented, so an observed dot
transformed through an observed pair's frame can be matched against them.

Recognition picks an observed pair, transforms the remaining observed dots
into its frame, lets each transformed dot vote for nearby table entries
with the Kent/projection likelihood pulled into hash space, shortlists the
reference bases with enough vote mass, and resolves the winner by Kabsch
reprojection error.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kent as _kent
from .errors import (
    DegenerateConfiguration,
    EmptyCorrespondences,
    NoBasisAboveThreshold,
    OutsideDisk,
    TooFewDots,
)
from .geometry import Rotation, kabsch
from .kent import ScoringParams

_MIN_CROSS_NORM = 1e-6


def _pattern_id(dots: np.ndarray) -> str:
    digest = hashlib.sha1(np.round(dots, 12).tobytes()).hexdigest()
    return digest[:12]


@dataclass(frozen=True)
class DotPattern:
    """Ordered reference dot layout on the unit sphere."""

    dots: np.ndarray
    id: str = ""

    def __post_init__(self):
        dots = np.asarray(self.dots, dtype=float).reshape(-1, 3)
        norms = np.linalg.norm(dots, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("pattern dots must be unit vectors")
        if len(dots) >= 2:
            cosang = np.clip(dots @ dots.T, -1.0, 1.0)
            np.fill_diagonal(cosang, -1.0)
            if np.arccos(np.max(cosang)) < 1e-6:
                raise ValueError("pattern contains coincident dots")
        dots.setflags(write=False)
        object.__setattr__(self, "dots", dots)
        if not self.id:
            object.__setattr__(self, "id", _pattern_id(dots))

    def __len__(self) -> int:
        return len(self.dots)


@dataclass(frozen=True)
class ObservedDotSet:
    """Dots seen in one frame, lifted to the viewer-side hemisphere."""

    dots: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        dots = np.asarray(self.dots, dtype=float).reshape(-1, 3)
        norms = np.linalg.norm(dots, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("observed dots must be unit vectors")
        if np.any(dots[:, 2] < -1e-9):
            raise ValueError("observed dots must lie on the viewer-side hemisphere (z >= 0)")
        dots.setflags(write=False)
        object.__setattr__(self, "dots", dots)

    def __len__(self) -> int:
        return len(self.dots)


@dataclass(frozen=True)
class HashEntry:
    """One table row: a reference dot in the frame of an ordered dot pair."""

    hash_value: np.ndarray
    basis_id: tuple[int, int]
    dot_id: int


@dataclass
class HashTable:
    """Immutable-after-build lookup structure for recognition."""

    pattern: DotPattern
    params: ScoringParams
    hash_values: np.ndarray      # (m, 3)
    basis_pairs: np.ndarray      # (m, 2) ordered (i, j)
    dot_ids: np.ndarray          # (m,)
    n_skipped_bases: int
    log_normalizer: float
    _tree: cKDTree = field(repr=False)

    @property
    def pattern_id(self) -> str:
        return self.pattern.id

    def __len__(self) -> int:
        return len(self.hash_values)

    @property
    def entries(self) -> list[HashEntry]:
        return [
            HashEntry(self.hash_values[k], (int(self.basis_pairs[k, 0]),
                                            int(self.basis_pairs[k, 1])),
                      int(self.dot_ids[k]))
            for k in range(len(self.hash_values))
        ]


def build_hash_table(pattern: DotPattern, params: ScoringParams | None = None) -> HashTable:
    """Construct the full hash table: n*(n-1)*(n-2) entries for n dots.

    Ordered pairs whose cross product is shorter than 1e-6 (near-parallel
    dots) are skipped and counted in ``n_skipped_bases``.
    """
    n = len(pattern)
    if n < 3:
        raise TooFewDots(f"hash table needs >= 3 dots, got {n}")
    params = params or ScoringParams()
    dots = pattern.dots

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = ii != jj
    pi, pj = ii[mask], jj[mask]                      # (n*(n-1),)
    cross = np.cross(dots[pi], dots[pj])
    keep = np.linalg.norm(cross, axis=1) >= _MIN_CROSS_NORM
    n_skipped = int(np.count_nonzero(~keep))
    pi, pj, cross = pi[keep], pj[keep], cross[keep]

    bases = np.stack([dots[pi], dots[pj], cross], axis=2)   # (p, 3, 3) columns
    inv = np.linalg.inv(bases)

    # Third-dot indices: all k not in {i, j}, exactly n-2 per pair.
    all_k = np.arange(n)
    third = np.array([all_k[(all_k != i) & (all_k != j)] for i, j in zip(pi, pj)])
    values = np.einsum("pab,pkb->pka", inv, dots[third])    # (p, n-2, 3)

    m = len(pi) * (n - 2)
    hash_values = values.reshape(m, 3)
    basis_pairs = np.repeat(np.column_stack([pi, pj]), n - 2, axis=0)
    dot_ids = third.reshape(m)

    return HashTable(
        pattern=pattern,
        params=params,
        hash_values=hash_values,
        basis_pairs=basis_pairs,
        dot_ids=dot_ids,
        n_skipped_bases=n_skipped,
        log_normalizer=_kent.kent_log_normalizer(params.kappa, params.beta),
        _tree=cKDTree(hash_values),
    )


def nearest_hash_values(table: HashTable, phi, k: int) -> list[HashEntry]:
    """The k table entries closest to ``phi`` in hash space.

    Ties on distance are broken deterministically by (basis_id, dot_id).
    """
    phi = np.asarray(phi, dtype=float).reshape(3)
    m = len(table)
    k = min(k, m)
    if k == 0:
        return []
    dist, _ = table._tree.query(phi, k=k)
    radius = float(np.atleast_1d(dist)[-1])
    cand = table._tree.query_ball_point(phi, radius + 1e-12)
    cand = np.asarray(cand, dtype=int)
    d = np.linalg.norm(table.hash_values[cand] - phi, axis=1)
    order = np.lexsort((table.dot_ids[cand], table.basis_pairs[cand, 1],
                        table.basis_pairs[cand, 0], d))
    picked = cand[order[:k]]
    return [
        HashEntry(table.hash_values[c], (int(table.basis_pairs[c, 0]),
                                         int(table.basis_pairs[c, 1])),
                  int(table.dot_ids[c]))
        for c in picked
    ]


def lift_to_sphere(p, r: float = 1.0) -> np.ndarray:
    """Lift a 2D image-plane point (in ball-radius units) onto the sphere.

    Returns the unit vector (x/r, y/r, sqrt(1 - (x/r)^2 - (y/r)^2)).
    """
    x, y = float(p[0]), float(p[1])
    if r <= 0:
        raise ValueError("ball radius must be positive")
    u, v = x / r, y / r
    s = u * u + v * v
    if s > 1.0 + 1e-12:
        raise OutsideDisk(f"point ({x}, {y}) lies outside the radius-{r} disk")
    return np.array([u, v, math.sqrt(max(0.0, 1.0 - s))])


@dataclass(frozen=True)
class RecognitionConfig:
    """Tunables for the recognition stage.

    ``k_nearest`` bounds the entries each transformed dot votes for;
    a basis stays shortlisted if its vote mass is within ``score_ratio``
    of the best and it collected votes from at least ``min_voting_dots``
    distinct dots (capped at the number of dots actually voting).
    ``match_gate`` is the angular gate for completing correspondences
    around a candidate rotation.

    A pair whose best fit explains fewer than half the observed dots is
    treated as a miss and the next pair (up to ``max_pairs``) is tried;
    noise on the basis dots shifts every vote at once, so a fresh pair
    usually recovers what the first one lost.
    """

    k_nearest: int = 8
    score_ratio: float = 100.0
    min_voting_dots: int = 2
    match_gate: float = math.radians(6.0)
    refit_rounds: int = 2
    max_pairs: int = 8
    randomize: bool = False


@dataclass(frozen=True)
class RecognitionResult:
    orientation: Rotation
    correspondences: tuple[tuple[int, int], ...]   # (observed idx, reference idx)
    rmse: float
    score: float                                   # log vote mass of the winning basis
    basis_tried: int


def reprojection_rmse(rotation: Rotation, pattern: DotPattern,
                      observed: ObservedDotSet, correspondences) -> float:
    """RMS geodesic angle between rotated reference dots and observed dots."""
    pairs = list(correspondences)
    if not pairs:
        raise EmptyCorrespondences("no correspondences to evaluate")
    obs_idx = np.array([p[0] for p in pairs], dtype=int)
    ref_idx = np.array([p[1] for p in pairs], dtype=int)
    rotated = rotation.apply(pattern.dots[ref_idx])
    # chord-based angle keeps full precision near zero (arccos floors at ~1e-8)
    chord = np.linalg.norm(rotated - observed.dots[obs_idx], axis=1)
    ang = 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))
    return float(np.sqrt(np.mean(ang * ang)))


def _complete_matches(rotation: Rotation, pattern: DotPattern,
                      observed: ObservedDotSet, gate: float) -> list[tuple[int, int]]:
    # Greedy one-to-one matching by ascending angle, gated at `gate`.
    rotated = rotation.apply(pattern.dots)
    cosang = np.clip(observed.dots @ rotated.T, -1.0, 1.0)
    ang = np.arccos(cosang)
    order = np.argsort(ang, axis=None, kind="stable")
    used_obs: set[int] = set()
    used_ref: set[int] = set()
    matches: list[tuple[int, int]] = []
    n = len(pattern)
    for flat in order:
        o, r = divmod(int(flat), n)
        if ang[o, r] > gate:
            break
        if o in used_obs or r in used_ref:
            continue
        matches.append((o, r))
        used_obs.add(o)
        used_ref.add(r)
    return matches


def _fit_candidate(r0: Rotation, pattern: DotPattern, observed: ObservedDotSet,
                   gate: float, rounds: int):
    """Alternate gated matching and Kabsch refits starting from ``r0``.

    The seed rotation comes from just the basis triple, so a second round
    of matching under the refit rotation recovers dots the first gate
    missed. Returns (rotation, matches) or None.
    """
    rotation = r0
    matches: list[tuple[int, int]] = []
    for _ in range(max(1, rounds)):
        new_matches = _complete_matches(rotation, pattern, observed, gate)
        if len(new_matches) < 2:
            return None
        try:
            rotation = kabsch(pattern.dots[[mm[1] for mm in new_matches]],
                              observed.dots[[mm[0] for mm in new_matches]])
        except DegenerateConfiguration:
            return None
        if new_matches == matches:
            break
        matches = new_matches
    return rotation, matches


def _score_pair(table: HashTable, dots: np.ndarray, a: int, b: int,
                cfg: RecognitionConfig):
    """Vote mass per reference basis for observed pair (a, b), or None."""
    xa, xb = dots[a], dots[b]
    c = np.cross(xa, xb)
    s = np.linalg.norm(c)
    if s < _MIN_CROSS_NORM:
        return None
    basis = np.column_stack([xa, xb, c])
    log_det = 2.0 * math.log(s)          # det [d, d', d x d'] = ||d x d'||^2
    inv = np.linalg.inv(basis)

    voters = np.array([i for i in range(len(dots)) if i not in (a, b)], dtype=int)
    phi = dots[voters] @ inv.T           # (v, 3)
    k = min(cfg.k_nearest, len(table))
    _, idx = table._tree.query(phi, k=k)
    idx = np.asarray(idx, dtype=int).reshape(len(voters), k)

    flat = idx.ravel()
    xh = table.hash_values[flat] @ basis.T              # (v*k, 3) back in dot space
    norms = np.linalg.norm(xh, axis=1)
    unit = xh / np.maximum(norms, 1e-300)[:, None]      # Kent sees the direction only
    params = table.params
    g1 = np.repeat(dots[voters], k, axis=0)             # Kent mean = the voting dot
    log_l = (-math.log(params.alpha) - 0.5 * math.log(2.0 * math.pi)
             - 0.5 * ((norms - 1.0) / params.alpha) ** 2
             + params.kappa * np.sum(g1 * unit, axis=1)
             - table.log_normalizer + log_det)
    if params.beta != 0.0:
        e = np.zeros_like(g1)
        e[np.arange(len(g1)), np.argmin(np.abs(g1), axis=1)] = 1.0
        g2 = np.cross(e, g1)
        g2 /= np.linalg.norm(g2, axis=1, keepdims=True)
        g3 = np.cross(g1, g2)
        log_l = log_l + params.beta * (np.sum(g2 * unit, axis=1) ** 2
                                       - np.sum(g3 * unit, axis=1) ** 2)

    n = len(table.pattern)
    bid = table.basis_pairs[flat, 0] * n + table.basis_pairs[flat, 1]
    scores = np.zeros(n * n)
    np.add.at(scores, bid, np.exp(log_l))
    voter_count = np.zeros(n * n, dtype=int)
    per_voter = bid.reshape(len(voters), k)
    for row in per_voter:
        voter_count[np.unique(row)] += 1
    return basis, scores, voter_count, len(voters)


def recognize(table: HashTable, observed: ObservedDotSet,
              cfg: RecognitionConfig | None = None,
              rng: np.random.Generator | None = None) -> RecognitionResult:
    """Identify the observed dots against the table and return the orientation.

    Observed pairs are tried in order of decreasing angular separation
    (or shuffled when ``cfg.randomize``). For each pair the shortlisted
    reference bases are fit with Kabsch, ranked by how many dots they
    explain and then by reprojection RMSE. A pair whose best fit matches
    at least half the observed dots settles the frame; otherwise further
    pairs are tried (bounded by ``cfg.max_pairs``) and the best fit seen
    anywhere is returned.

    Raises:
        TooFewDots: fewer than 3 observed dots.
        NoBasisAboveThreshold: every pair exhausted without a usable basis.
    """
    cfg = cfg or RecognitionConfig()
    dots = observed.dots
    m = len(dots)
    if m < 3:
        raise TooFewDots(f"recognition needs >= 3 observed dots, got {m}")

    pairs = [(a, b) for a in range(m) for b in range(a + 1, m)]
    if cfg.randomize:
        if rng is None:
            raise ValueError("randomize=True requires an rng")
        order = rng.permutation(len(pairs))
        pairs = [pairs[int(i)] for i in order]
    else:
        # widest-conditioned first: basis quality is the cross norm
        # sin(separation), which peaks at 90 deg and dies at 0 and 180
        cond = [-float(np.linalg.norm(np.cross(dots[a], dots[b]))) for a, b in pairs]
        pairs = [p for _, p in sorted(zip(cond, pairs), key=lambda t: (t[0], t[1]))]

    pattern = table.pattern
    n = len(pattern)
    n_tried = 0
    accept_matches = max(3, (m + 1) // 2)
    best = None
    best_key = None
    for a, b in pairs[:max(1, cfg.max_pairs)]:
        scored = _score_pair(table, dots, a, b, cfg)
        if scored is None:
            continue
        _, scores, voter_count, n_voters = scored
        best_score = scores.max()
        if best_score <= 0.0:
            continue
        floor = min(cfg.min_voting_dots, n_voters)
        short = np.nonzero((scores >= best_score / cfg.score_ratio)
                           & (voter_count >= floor))[0]
        if len(short) == 0:
            continue
        short = short[np.argsort(-scores[short], kind="stable")]

        xa, xb = dots[a], dots[b]
        obs_cross = np.cross(xa, xb)
        obs_cross /= np.linalg.norm(obs_cross)
        for sid in short:
            i, j = divmod(int(sid), n)
            n_tried += 1
            di, dj = pattern.dots[i], pattern.dots[j]
            ref_cross = np.cross(di, dj)
            nc = np.linalg.norm(ref_cross)
            if nc < _MIN_CROSS_NORM:
                continue
            try:
                r0 = kabsch([di, dj, ref_cross / nc], [xa, xb, obs_cross])
            except DegenerateConfiguration:
                continue
            fit = _fit_candidate(r0, pattern, observed, cfg.match_gate,
                                 cfg.refit_rounds)
            if fit is None:
                continue
            r, matches = fit
            rmse = reprojection_rmse(r, pattern, observed, matches)
            # rank by evidence explained before error: a wrong basis that
            # matches 3 of 10 dots must not beat the right one matching all
            key = (-len(matches), rmse)
            if best_key is None or key < best_key:
                best_key = key
                best = (rmse, r, matches, float(np.log(scores[sid])))
        if best is not None and len(best[2]) >= accept_matches:
            break
    if best is None:
        raise NoBasisAboveThreshold("no reference basis gathered enough vote mass")
    rmse, r, matches, logscore = best
    return RecognitionResult(
        orientation=r,
        correspondences=tuple(matches),
        rmse=rmse,
        score=logscore,
        basis_tried=n_tried,
    )
