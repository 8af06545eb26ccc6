"""dotspin: dotted-sphere orientation estimation and spin regression.

The pipeline: a dot pattern on a sphere is recognized per frame through
Bayesian geometric hashing (Kent-distribution scoring in a pair-basis
hash space, Kabsch refinement), and the spin vector is regressed from
the resulting orientation sequence via an SVD rotation-plane fit with
RANSAC outlier rejection.
"""

__version__ = "0.1.0"

from .errors import DotspinError
from .geometry import (
    AxisAngle,
    Rotation,
    geodesic_angle,
    kabsch,
    random_rotation,
    rotate,
    unit_vector,
)
from .hashing import (
    DotPattern,
    HashEntry,
    HashTable,
    ObservedDotSet,
    RecognitionConfig,
    RecognitionResult,
    build_hash_table,
    lift_to_sphere,
    nearest_hash_values,
    recognize,
    reprojection_rmse,
)
from .kent import (
    HashBasis,
    KentParams,
    ProjectionParams,
    ScoringParams,
    feature_log_likelihood,
    hash_basis,
    hash_space_log_likelihood,
    kent_log_normalizer,
    kent_log_pdf,
    kent_normalizer,
    kent_sample,
    projection_likelihood,
)
from .pattern import (
    EvalConfig,
    PatternEvalReport,
    evaluate_pattern,
    hash_space_nn_objective,
    optimize_pattern,
    perturb_dot,
    random_pattern,
    visible_dots,
)
from .spin import (
    DampeningFit,
    OrientationSample,
    RansacConfig,
    SpinEstimate,
    dampening_fit,
    finite_difference_spin,
    propagate_orientation,
    quatera_fit,
    ransac_spin,
    theoretical_dampening,
    unwrap_angles,
)
from .synth import GroundTruthFrame, NoiseConfig, generate_observation, generate_sequence

__all__ = [name for name in dir() if not name.startswith("_")]
