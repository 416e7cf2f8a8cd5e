"""Low-rank matrix completion from noisy samples.

Solvers
-------
optspace_solve, incremental_optspace_solve
    Spectral initialization followed by gradient descent over orthonormal
    factors.
admira_solve
    Greedy rank-r atomic decomposition.
fpca_solve
    Nuclear-norm regularized least squares with continuation.
rank_r_projection
    Rescaled truncated SVD of the zero-filled observations.

Everything takes a :class:`SparseObservations` and returns either a
:class:`SolveResult` or a :class:`FactoredMatrix`.
"""

from .admira import admira_solve
from .core import (
    DimensionError,
    FactoredMatrix,
    SolveResult,
    SparseObservations,
    SVDConvergenceError,
    frobenius_norm,
    project_observed,
    spectral_norm,
    truncated_svd,
)
from .datagen import NoiseSpec, ProblemInstance, make_instance
from .fpca import FpcaConfig, fpca_solve, svt_shrink
from .metrics import mae_nmae, oracle_estimate, oracle_rmse, rmse
from .optspace import OptSpaceConfig, incremental_optspace_solve, optspace_solve
from .spectral import estimate_rank, rank_r_projection, trim

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "FactoredMatrix",
    "FpcaConfig",
    "NoiseSpec",
    "OptSpaceConfig",
    "ProblemInstance",
    "SVDConvergenceError",
    "SolveResult",
    "SparseObservations",
    "admira_solve",
    "estimate_rank",
    "fpca_solve",
    "frobenius_norm",
    "incremental_optspace_solve",
    "mae_nmae",
    "make_instance",
    "optspace_solve",
    "oracle_estimate",
    "oracle_rmse",
    "project_observed",
    "rank_r_projection",
    "rmse",
    "spectral_norm",
    "svt_shrink",
    "trim",
    "truncated_svd",
]
