"""Attribute association bias audits for recommendation embedding spaces."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AttributeLabeling,
    EmbeddingSpace,
    EntityGroup,
    centroid,
    cosine,
    group_stddev,
    normalize,
)
from .directions import (  # noqa: E402
    BiasDirection,
    LinearProbe,
    centroid_difference_direction,
    most_biased_entities,
    paired_pca_direction,
    probe_direction,
    random_pairs,
    train_linear_probe,
)
from .metrics import (  # noqa: E402
    MetricBundle,
    compute_bundle,
    deaa,
    eaa,
    eaa_effect_size,
    geaa,
    rripa,
    rripa_effect_size,
)
from .significance import (  # noqa: E402
    DirectionValidation,
    PermutationResult,
    permutation_test_deaa,
    permutation_test_geaa,
    permutation_test_rripa,
    validate_direction,
)
from .stats import bonferroni_alpha, chi_square_test, rank_sum_test, signed_rank_test  # noqa: E402
