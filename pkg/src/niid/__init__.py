"""Property testing of the average of non-identical distributions from a few
labeled samples per source."""
from .closeness import ClosenessParams, l2_statistic_f, l2_test, test_closeness_l1
from .core import (
    DistributionSequence,
    NiidError,
    ProbabilityVector,
    RngSeed,
    SampleBatch,
    SupportMismatchError,
    ValidationError,
    average,
    draw_batch,
    l1_distance,
    learn_average,
    lp_norm,
    tv_distance,
)
from .identity import build_reduction, map_distribution, map_sample, map_samples, test_identity
from .uniformity import Decision, UniformityParams, Verdict, collision_statistic_z, required_T, test_uniformity

__version__ = "0.1.0"
