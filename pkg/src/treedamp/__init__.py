"""Optimal damping of a pantograph-delay control system on a temporal tree."""

from .cauchy import ProblemSpec, ell, residual_forward, solve_forward, volterra_kernel
from .errors import (
    CycleOrDisconnected,
    FeasibilityViolated,
    InvalidQ,
    MeshMismatch,
    MultipleRoots,
    NoHistory,
    NonpositiveLength,
    NotAChain,
    NotPositiveDefinite,
    OutOfRange,
    ParseError,
    StepRejected,
    TooFewLevels,
    ValidationError,
)
from .fileio import emit_problem, load_problem, parse_problem
from .galerkin import assemble, bilinear, energy, extract_control, optimize, solve, solve_iterative
from .grid import (
    DofLayout,
    Mesh,
    StepFunction,
    TreeFunction,
    build_dof_layout,
    build_mesh,
    h1_norm,
    mesh_from_nodes,
)
from .tree import TemporalTree, active_length, build_tree, delay_map, inverse_delay
from .verify import (
    VerificationReport,
    chain_equals_interval,
    convergence_study,
    kirchhoff_residual,
    optimality_probe,
    strong_residual,
    verify,
)

__version__ = "0.1.0"
