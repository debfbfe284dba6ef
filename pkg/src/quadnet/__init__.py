"""Exact asymptotics and finite-size solvers for l2-regularized quadratic
two-layer networks, a.k.a. noisy PSD matrix sensing with extensive rank.

The public surface, by theme:

spectral law      spectral_law, density, stieltjes, cdf, bulk_supports,
                  integrate_density, density_quadrature, mp_edges
integrals         J, tail_moments, J_partials, semicircle_incomplete_moment
state evolution   ModelParams, SEState, SEFixedPoint, Observables,
                  solve_fixed_point, solve_interpolator_limit, sweep_alpha,
                  observables, replicon_margin, se_step
thresholds        ThresholdResult, interpolation_threshold,
                  interpolation_threshold_noiseless,
                  strong_recovery_threshold, weak_threshold,
                  small_rank_test_error
simulation        Dataset, generate_dataset, save_dataset, load_dataset,
                  vec, mat, output_denoiser, spectral_denoiser, gamp_run,
                  prox_gradient_solve, gd_train, empirical_observables,
                  numerical_rank
cli               main
"""

from .integrals import J, J_partials, semicircle_incomplete_moment, tail_moments
from .simulator import (
    Dataset,
    GampState,
    SimulationDivergenceError,
    SolverExhaustionError,
    empirical_observables,
    gamp_run,
    gd_train,
    generate_dataset,
    load_dataset,
    mat,
    numerical_rank,
    output_denoiser,
    prox_gradient_solve,
    quadratic_labels,
    save_dataset,
    spectral_denoiser,
    vec,
)
from .spectral import (
    DegenerateCubicError,
    EdgeDetectionError,
    QuadratureError,
    SpectralLaw,
    bulk_supports,
    cdf,
    density,
    density_quadrature,
    integrate_density,
    mp_edges,
    spectral_law,
    stieltjes,
)
from .state_evolution import (
    ModeError,
    ModelParams,
    Observables,
    SEConvergenceError,
    SEDivergenceError,
    SEFixedPoint,
    SEState,
    observables,
    replicon_margin,
    se_step,
    solve_fixed_point,
    solve_interpolator_limit,
    sweep_alpha,
)
from .thresholds import (
    ThresholdResult,
    interpolation_threshold,
    interpolation_threshold_noiseless,
    small_rank_test_error,
    strong_recovery_threshold,
    weak_threshold,
)

__version__ = "1.0.0"

__all__ = [
    "J",
    "J_partials",
    "semicircle_incomplete_moment",
    "tail_moments",
    "Dataset",
    "GampState",
    "SimulationDivergenceError",
    "SolverExhaustionError",
    "empirical_observables",
    "gamp_run",
    "gd_train",
    "generate_dataset",
    "load_dataset",
    "mat",
    "numerical_rank",
    "output_denoiser",
    "prox_gradient_solve",
    "quadratic_labels",
    "save_dataset",
    "spectral_denoiser",
    "vec",
    "DegenerateCubicError",
    "EdgeDetectionError",
    "QuadratureError",
    "SpectralLaw",
    "bulk_supports",
    "cdf",
    "density",
    "density_quadrature",
    "integrate_density",
    "mp_edges",
    "spectral_law",
    "stieltjes",
    "ModeError",
    "ModelParams",
    "Observables",
    "SEConvergenceError",
    "SEDivergenceError",
    "SEFixedPoint",
    "SEState",
    "observables",
    "replicon_margin",
    "se_step",
    "solve_fixed_point",
    "solve_interpolator_limit",
    "sweep_alpha",
    "ThresholdResult",
    "interpolation_threshold",
    "interpolation_threshold_noiseless",
    "small_rank_test_error",
    "strong_recovery_threshold",
    "weak_threshold",
    "__version__",
]
