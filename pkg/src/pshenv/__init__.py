"""Plurisubharmonic envelopes on flat complex tori.

The envelope ``P(v)`` of a smooth obstacle is computed as the limit of the
beta-family of complex Monge-Ampere equations and, in complex dimension one,
independently as the solution of a linear complementarity problem.
"""
from .torus import (
    GridField,
    GridMismatchError,
    HermitianField,
    MetricError,
    TorusGeometry,
    build_geometry,
    complex_hessian,
    gradient_norm_sq,
    grid_coords,
    integrate,
    kernel_first_moment,
    laplacian,
    mollify,
    real_hessian,
    real_hessian_lambda1,
    third_derivative_sup,
)
from .newton import (
    DEFAULT_SCHEDULE,
    BetaSolution,
    PositivityError,
    SolverError,
    StagnationError,
    SweepResult,
    continuation_sweep,
    density_residual,
    ma_residual,
    max_principle_box,
    positivity_margin,
    quadratic_tail,
    solve_beta,
)
from .envelope import (
    EnvelopeResult,
    OracleError,
    contact_mask_from_beta,
    envelope_beta_limit,
    envelope_psor,
    rooftop,
)
from .verify import (
    ContactError,
    DiagnosticsReport,
    RateFit,
    contact_hessian_check,
    hessian_uniformity,
    ma_concentration_check,
    ma_mass_check,
    q_diagnostic,
    rate_fit,
)

__version__ = "0.1.0"
