"""Kent distribution on the sphere and its pull into hash space.

The recognition scoring rests on three densities:

* ``k(x)``: Kent density on the unit sphere with mean axis ``gamma1``,
  concentration ``kappa`` and ellipticity ``beta`` (``2*beta < kappa``);
* ``n(x)``: a Gaussian "projection" factor on ``||x|| - 1`` with width
  ``alpha``, extending the spherical density into 3D;
* their product pushed through a hash basis ``B`` by the change of
  variable ``h = B^{-1} x``, which multiplies the density by ``|det B|``.

Everything is computed in log space: at the operating concentration
(``kappa = 500``) the normalizer is ~1e215 and linear-space arithmetic
would be fragile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import truncnorm

from .errors import InvalidParams, NonConvergence, SingularBasis
from .geometry import unit_vector

_LOG_2PI = math.log(2.0 * math.pi)
_SERIES_CAP = 200
_SERIES_RTOL = 1e-12

# Operating point used for recognition scoring unless overridden.
DEFAULT_KAPPA = 500.0
DEFAULT_BETA = 0.0
DEFAULT_ALPHA = 0.03


@dataclass(frozen=True)
class ScoringParams:
    """The (kappa, beta, alpha) triple shared by table build and scoring."""

    kappa: float = DEFAULT_KAPPA
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.kappa <= 0 or self.beta < 0 or 2.0 * self.beta >= self.kappa:
            raise InvalidParams("require kappa > 0 and 0 <= 2*beta < kappa")
        if self.alpha <= 0:
            raise InvalidParams("alpha must be positive")


def _orthonormal_complement(g1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic tangent frame: cross with the smallest-component axis."""
    e = np.zeros(3)
    e[int(np.argmin(np.abs(g1)))] = 1.0
    g2 = unit_vector(np.cross(e, g1))
    g3 = np.cross(g1, g2)
    return g2, g3


@dataclass(frozen=True)
class KentParams:
    """Axes and shape parameters of a Kent density.

    ``gamma1`` is the mean direction, ``gamma2``/``gamma3`` the major and
    minor tangent axes. Validity requires the axes to be orthonormal and
    ``0 <= 2*beta < kappa`` (unimodality).
    """

    gamma1: np.ndarray
    gamma2: np.ndarray
    gamma3: np.ndarray
    kappa: float
    beta: float

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            object.__setattr__(self, name, v)
        g = np.vstack([self.gamma1, self.gamma2, self.gamma3])
        if not np.allclose(g @ g.T, np.eye(3), atol=1e-9):
            raise InvalidParams("gamma axes must be mutually orthonormal")
        if self.kappa <= 0 or self.beta < 0 or 2.0 * self.beta >= self.kappa:
            raise InvalidParams("require kappa > 0 and 0 <= 2*beta < kappa")

    @classmethod
    def from_mean(cls, direction, kappa: float, beta: float = 0.0) -> "KentParams":
        """Build params around a mean direction with a deterministic frame."""
        g1 = unit_vector(direction)
        g2, g3 = _orthonormal_complement(g1)
        return cls(g1, g2, g3, float(kappa), float(beta))


@dataclass(frozen=True)
class ProjectionParams:
    """Width of the radial (off-sphere) Gaussian factor."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise InvalidParams("alpha must be positive")


def kent_log_normalizer(kappa: float, beta: float) -> float:
    """log of the Kent normalizer c(kappa, beta).

    The series runs over half-integer-order modified Bessel terms; each
    Bessel value is taken from the exponentially scaled ``ive`` so the
    whole computation stays in log space. Terms are added until one
    contributes less than 1e-12 relatively.
    """
    if kappa <= 0 or beta < 0 or 2.0 * beta >= kappa:
        raise InvalidParams("require kappa > 0 and 0 <= 2*beta < kappa")
    log_half_kappa = math.log(0.5 * kappa)

    def log_term(j: int) -> float:
        log_bessel = kappa + math.log(special.ive(2 * j + 0.5, kappa))
        t = (math.lgamma(j + 0.5) - math.lgamma(j + 1.0)
             - (2 * j + 0.5) * log_half_kappa + log_bessel)
        if j > 0:
            t += 2 * j * math.log(beta)
        return t

    if beta == 0.0:
        return _LOG_2PI + log_term(0)

    total = log_term(0)
    for j in range(1, _SERIES_CAP + 1):
        t = log_term(j)
        if t == -math.inf:
            break
        new_total = np.logaddexp(total, t)
        if t - new_total < math.log(_SERIES_RTOL):
            return _LOG_2PI + new_total
        total = new_total
    else:
        raise NonConvergence(f"normalizer series did not converge in {_SERIES_CAP} terms")
    return _LOG_2PI + total


def kent_normalizer(kappa: float, beta: float) -> float:
    """c(kappa, beta) in linear space (may overflow above kappa ~ 700)."""
    return math.exp(kent_log_normalizer(kappa, beta))


def _kent_exponent(params: KentParams, x: np.ndarray) -> np.ndarray:
    """kappa*g1.x + beta*((g2.x)^2 - (g3.x)^2), no norm check, batched."""
    g1x = x @ params.gamma1
    out = params.kappa * g1x
    if params.beta != 0.0:
        g2x = x @ params.gamma2
        g3x = x @ params.gamma3
        out = out + params.beta * (g2x * g2x - g3x * g3x)
    return out


def kent_log_pdf(params: KentParams, x) -> np.ndarray | float:
    """log Kent density at unit vector(s) ``x`` (``(3,)`` or ``(n, 3)``)."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise InvalidParams("kent_log_pdf requires unit-norm inputs")
    out = _kent_exponent(params, x) - kent_log_normalizer(params.kappa, params.beta)
    return float(out) if np.ndim(out) == 0 else out


def _sample_vmf(params: KentParams, n: int, rng: np.random.Generator) -> np.ndarray:
    # Exact inverse-CDF draw of t = gamma1 . x on S^2, uniform azimuth.
    kappa = params.kappa
    u = rng.random(n)
    val = u + (1.0 - u) * math.exp(-2.0 * kappa)
    val = np.maximum(val, np.finfo(float).tiny)
    t = 1.0 + np.log(val) / kappa
    t = np.clip(t, -1.0, 1.0)
    phi = 2.0 * math.pi * rng.random(n)
    s = np.sqrt(np.maximum(0.0, 1.0 - t * t))
    return (np.outer(t, params.gamma1)
            + np.outer(s * np.cos(phi), params.gamma2)
            + np.outer(s * np.sin(phi), params.gamma3))


def _sample_kent_elliptic(params: KentParams, n: int, rng: np.random.Generator) -> np.ndarray:
    # Polar component from the exact exp(kappa*t - beta*t^2) marginal (a
    # truncated normal, since 2*beta < kappa puts the vertex beyond t=1),
    # then azimuth by rejection with acceptance
    # exp(beta*(1-t^2)*(cos(2psi) - 1)) <= 1.
    kappa, beta = params.kappa, params.beta
    mu = kappa / (2.0 * beta)
    sigma = 1.0 / math.sqrt(2.0 * beta)
    a, b = (-1.0 - mu) / sigma, (1.0 - mu) / sigma
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 256)
        t = truncnorm.rvs(a, b, loc=mu, scale=sigma, size=m, random_state=rng)
        psi = 2.0 * math.pi * rng.random(m)
        s2 = 1.0 - t * t
        accept = rng.random(m) < np.exp(beta * s2 * (np.cos(2.0 * psi) - 1.0))
        t, psi, s2 = t[accept], psi[accept], s2[accept]
        k = min(len(t), n - filled)
        s = np.sqrt(np.maximum(0.0, s2[:k]))
        out[filled:filled + k] = (np.outer(t[:k], params.gamma1)
                                  + np.outer(s * np.cos(psi[:k]), params.gamma2)
                                  + np.outer(s * np.sin(psi[:k]), params.gamma3))
        filled += k
    return out


def kent_sample(params: KentParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` unit vectors from the Kent density, shape ``(n, 3)``."""
    if n < 1:
        raise InvalidParams("n must be >= 1")
    if params.beta == 0.0:
        return _sample_vmf(params, n, rng)
    return _sample_kent_elliptic(params, n, rng)


def log_projection_likelihood(alpha: float, x) -> np.ndarray | float:
    """log n(x): Gaussian factor on how far ``||x||`` is from 1."""
    if alpha <= 0:
        raise InvalidParams("alpha must be positive")
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1)
    out = -math.log(alpha) - 0.5 * _LOG_2PI - 0.5 * ((norms - 1.0) / alpha) ** 2
    return float(out) if np.ndim(out) == 0 else out


def projection_likelihood(alpha: float, x) -> np.ndarray | float:
    """n(x) = exp(-((||x||-1)/alpha)^2 / 2) / (alpha*sqrt(2*pi))."""
    return np.exp(log_projection_likelihood(alpha, x))


def feature_log_likelihood(kent: KentParams, proj: ProjectionParams, x) -> np.ndarray | float:
    """log of the 3D feature density p(x) = n(x) * k(x / ||x||).

    Polar factorization: the Kent factor sees only the direction of ``x``
    and the radial factor ``n`` owns the off-sphere behaviour. Evaluating
    the Kent exponent at ``x`` itself would make the product grow without
    bound along ``gamma1`` (linear ``kappa*gamma1.x`` beats the quadratic
    radial penalty whenever ``kappa * alpha^2`` is not small), which at
    the kappa=500 operating point would invert the scoring. Zero vectors
    get -inf.
    """
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(norms, 1e-300)
    out = (log_projection_likelihood(proj.alpha, x)
           + _kent_exponent(kent, x / safe)
           - kent_log_normalizer(kent.kappa, kent.beta))
    out = np.where(np.squeeze(norms, axis=-1) < 1e-12, -np.inf, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class HashBasis:
    """Invertible frame built from two dots: columns [d, d', d x d']."""

    matrix: np.ndarray
    det: float = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        det = float(np.linalg.det(m))
        if abs(det) <= 1e-12:
            raise SingularBasis("basis matrix is numerically singular")
        object.__setattr__(self, "det", det)

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


def hash_basis(d, d_prime) -> HashBasis:
    """Basis with columns ``[d, d', d x d']`` for two non-parallel dots."""
    d = np.asarray(d, dtype=float).reshape(3)
    dp = np.asarray(d_prime, dtype=float).reshape(3)
    return HashBasis(np.column_stack([d, dp, np.cross(d, dp)]))


def hash_space_log_likelihood(kent: KentParams, proj: ProjectionParams,
                              basis: HashBasis, h) -> np.ndarray | float:
    """log p(h) of the feature density pushed into hash space.

    Change of variable h = B^{-1} x gives p(h) = p(B h) * |det B|.
    """
    h = np.asarray(h, dtype=float)
    x = h @ basis.matrix.T
    out = feature_log_likelihood(kent, proj, x) + math.log(abs(basis.det))
    return float(out) if np.ndim(out) == 0 else out
