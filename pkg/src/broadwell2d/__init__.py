"""Solver for the four-velocity planar gas on a rectangle.

The public surface mirrors the layering: core types, characteristic
tracing, the two slab operators, the Picard solver and marcher, and the
independent verification harness.
"""

from .core import (
    BroadwellError,
    ConfigError,
    DataError,
    DomainError,
    EdgeViolation,
    Field4,
    GridSizeError,
    ModelParams,
    NormReport,
    NumericsError,
    PreconditionError,
    ProblemData,
    RectDomain,
    SlabGrid,
    TimeSlab,
    check_compatibility,
    edge_affine,
    edge_constant,
    edge_table,
    edge_trig,
    edge_zero,
    evaluate_data,
    norm_report,
    space_affine,
    space_bump,
    space_constant,
    space_table,
    space_trig,
    space_zero,
)
from .characteristics import (
    CharFoot,
    ShiftedNormReport,
    shifted_eval,
    shifted_norm_bound,
    trace,
)
from .operators import (
    OMEGA,
    QuadratureSpec,
    apply_T,
    apply_T_sigma,
    collision_q,
    interp_field,
    relaxed_q,
    rho,
)
from .solver import (
    HypothesesError,
    HypothesisVerdict,
    MarchError,
    MarchRecord,
    MarchState,
    NonConvergenceError,
    SlabSolution,
    TheoremConstants,
    check_hypotheses,
    compute_constants,
    global_march,
    picard_solve,
    transport_field,
)
from .verify import (
    BalanceReport,
    MeasuredConstants,
    VerificationReport,
    conservation_balance,
    measure_constants,
    pde_residual,
    random_trig_field,
    upwind_oracle,
)

__version__ = "0.1.0"
