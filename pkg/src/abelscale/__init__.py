"""Tikhonov inversion of Abel-type integral operators in adapted Hilbert scales."""

from .operators import (
    ConstantKernel,
    CallbackKernel,
    ConvergenceEstimate,
    ForwardOperator,
    Grid,
    Kernel,
    KERNELS,
    StereologyKernel,
    TabulatedKernel,
    apply_forward,
    build_abel_matrix,
    convergence_order,
    grid_norm,
)
from .hilbert_scale import (
    PenaltyMatrix,
    ScaleOperator,
    build_penalty,
    build_scale_operator,
    factorization_residual,
    sym_fractional_power,
)
from .solver import (
    Reconstruction,
    TikhonovProblem,
    solve,
    solve_cg,
    solve_direct,
)
from .tuning import (
    NoiseModel,
    RatePlan,
    RateStudyError,
    RateStudyResult,
    SlopeInfo,
    TruthFunction,
    add_noise,
    apriori_alpha,
    discrepancy_alpha,
    fit_loglog_slope,
    oracle_alpha,
    run_rate_study,
    theoretical_slope,
)
from .diagnostics import (
    ResidualKernelReport,
    TriangleSamples,
    hs_condition_check,
    sample_residual_kernel,
)

__version__ = "0.1.0"

__all__ = [
    "CallbackKernel",
    "ConstantKernel",
    "ConvergenceEstimate",
    "ForwardOperator",
    "Grid",
    "Kernel",
    "KERNELS",
    "NoiseModel",
    "PenaltyMatrix",
    "RatePlan",
    "RateStudyError",
    "RateStudyResult",
    "Reconstruction",
    "ResidualKernelReport",
    "ScaleOperator",
    "SlopeInfo",
    "StereologyKernel",
    "TabulatedKernel",
    "TruthFunction",
    "TikhonovProblem",
    "TriangleSamples",
    "add_noise",
    "apply_forward",
    "apriori_alpha",
    "build_abel_matrix",
    "build_penalty",
    "build_scale_operator",
    "convergence_order",
    "discrepancy_alpha",
    "factorization_residual",
    "fit_loglog_slope",
    "grid_norm",
    "hs_condition_check",
    "oracle_alpha",
    "run_rate_study",
    "sample_residual_kernel",
    "solve",
    "solve_cg",
    "solve_direct",
    "sym_fractional_power",
    "theoretical_slope",
    "__version__",
]
