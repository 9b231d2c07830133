"""Naive Bayes Nearest Neighbor and Local NBNN image-descriptor classification.

The search kernels are compiled with Cython when available; set
``LNBNN_PURE_PYTHON=1`` to force the pure-Python implementation.
"""

__version__ = "0.1.0"

from lnbnn._backend import name as backend  # noqa: E402
from lnbnn.ann import (  # noqa: E402
    BruteForceIndex,
    ForestConfig,
    KdForestIndex,
    Neighbor,
    brute_force_knn,
    build_forest,
    forest_knn,
    knn_with_class_lookup,
)
from lnbnn.classifiers import (  # noqa: E402
    LocalNbnnModel,
    NbnnModel,
    build_local_nbnn,
    build_nbnn,
    local_nbnn_classify,
    log_odds_increments,
    nbnn_classify,
    positive_increment_classify,
)
from lnbnn.core import (  # noqa: E402
    ClassScores,
    LabeledDescriptorSet,
    LocatedDescriptor,
    QueryImage,
    argmin_class,
    augment_with_location,
    squared_distance,
)
