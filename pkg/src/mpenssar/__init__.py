"""Multivariate penalized signature-based spatial autoregression."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ClusteringError,
    ConfigError,
    ContractError,
    DimensionCapError,
    GenerationError,
    HeuristicDegenerateError,
    MpenssarError,
    NumericalError,
    PredictionInfeasibleError,
    PreconditionViolatedError,
    SingularityError,
)
from .estimator import (  # noqa: E402
    MpenssarFit,
    ProjssarFit,
    fit,
    fit_R,
    penssar_fit,
    predict,
    profile_coefficients,
    projssar_fit,
)
from .path import AugmentedPath, Path, augment, total_variation  # noqa: E402
from .selection import PenaltyConfig, pen, select_order, slope_heuristic  # noqa: E402
from .signature import SigVector, sig_dim, sig_matrix, signature  # noqa: E402
from .simulation import SimConfig, builtin_R, simulate  # noqa: E402
from .spatial import SpatialWeights, knn_weights, split_ordinary, split_spatial  # noqa: E402
from .theory import misselection_bound, theory_constants  # noqa: E402
