"""Control-based Lagrangian flows for equality-constrained optimization."""

from .errors import (
    AmbiguousSolutionError,
    AssumptionViolation,
    DerivativeError,
    IntegrationError,
    LagflowError,
    ProblemDefinitionError,
    RankDeficiencyError,
    StiffnessError,
    UnsupportedProblemError,
)
from .flows import FlowSpec, FlowState
from .integrate import IntegrateConfig, Trajectory, integrate, suggested_config
from .problem import (
    Chart1D,
    KKTPoint,
    Problem,
    builtin,
    golden,
    kkt_residual,
    reference_solution,
    register_problem,
    validate_derivatives,
)

__version__ = "0.1.0"
