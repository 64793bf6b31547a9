"""Sparse precision-matrix estimation and de-biased inference for
high-frequency path data: weighted graphical Lasso on realized covariations,
an optional known-factor adjustment, entrywise and simultaneous confidence
intervals, and a Monte Carlo lab for the accompanying simulation designs.
"""

__version__ = "0.1.0"

from .debias import (
    AvarContext,
    DebiasedEstimate,
    InferenceReport,
    avar_entries,
    build_avar_context,
    debiased,
    entrywise_ci,
    gamma_correction,
    multiplier_sup_quantile,
    normal_quantile,
)
from .errors import (
    ConvergenceWarning,
    DegenerateGridError,
    DegenerateVarianceError,
    DesignDegeneracyError,
    HifreqError,
    IngestError,
    InvalidInputError,
    InvalidParameterError,
    NotPositiveSemidefiniteError,
    NumericFailureError,
)
from .factor import (
    FactorAdjustedEstimate,
    FactorFit,
    assemble_sigma_y,
    factor_adjusted_estimate,
    fit,
    precision_of_sigma_y,
    residual_precision,
)
from .glasso import (
    GlassoSolution,
    SolveOptions,
    kkt_residual,
    solve_correlation,
    solve_unweighted,
    solve_weighted,
)
from .matcore import (
    SparsityStats,
    eigen_range,
    elementwise_norm,
    kron_apply,
    operator_norm,
    sparsity_stats,
)
from .quadcov import (
    IncrementSet,
    PathPanel,
    increments,
    panel_from_returns,
    realized_cov,
    realized_crosscov,
)
from .simlab import (
    HestonParams,
    McMetrics,
    SimDesign,
    SimTruth,
    design1_residual_cov,
    design2_residual_cov,
    gen_loadings,
    mc_run,
    simulate_heston_factors,
    simulate_panel,
)
from .tuning import BicTrace, LambdaGrid, bic, lambda_grid, select
