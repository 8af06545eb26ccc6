"""Exception hierarchy for the dotspin library."""


class DotspinError(Exception):
    """Base class for all dotspin-specific errors."""


class LengthMismatch(DotspinError):
    """Corresponded point lists have different lengths."""


class DegenerateConfiguration(DotspinError):
    """Point set does not determine a unique rotation (e.g. collinear)."""


class InvalidParams(DotspinError):
    """Distribution parameters violate their validity constraints."""


class NonConvergence(DotspinError):
    """An iterative series or solver exceeded its iteration cap."""


class SingularBasis(DotspinError):
    """Hash basis matrix is numerically singular."""


class OutsideDisk(DotspinError):
    """Image-plane point lies outside the ball's projected disk."""


class TooFewDots(DotspinError):
    """Not enough dots for the requested operation."""


class NoBasisAboveThreshold(DotspinError):
    """Recognition found no candidate basis with sufficient support."""


class EmptyCorrespondences(DotspinError):
    """A reprojection metric was requested with no matched pairs."""


class InfeasibleSeparation(DotspinError):
    """Could not place dots at the requested minimum separation."""


class TooFewSamples(DotspinError):
    """Not enough orientation samples for a spin fit."""


class NonUniqueAxis(DotspinError):
    """The rotation plane of a quaternion sequence is ill-defined."""


class NoConsensus(DotspinError):
    """RANSAC failed to find a model with enough inliers."""


class NonPositiveNorm(DotspinError):
    """Spin-norm series must be strictly positive for a log-linear fit."""


class FileFormatError(DotspinError):
    """A data file failed to parse; the message names the offending line."""
