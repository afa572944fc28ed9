"""Exception hierarchy."""

from __future__ import annotations

import numpy as np


class LagflowError(Exception):
    """Base class for errors raised by this package."""


class ProblemDefinitionError(LagflowError, ValueError):
    pass


class UnsupportedProblemError(LagflowError, ValueError):
    pass


class AmbiguousSolutionError(LagflowError):
    pass


class _WitnessError(LagflowError):
    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float).copy()


class DerivativeError(_WitnessError):
    """Non-finite evaluation of a problem map."""


class AssumptionViolation(_WitnessError):
    """A checked structural assumption fails; ``point`` holds the witness."""


class RankDeficiencyError(AssumptionViolation):
    """Constraint Jacobian is (numerically) rank deficient at ``point``."""


class StiffnessError(LagflowError):
    """Adaptive step size collapsed; the semi-implicit method is the remedy."""


class IntegrationError(LagflowError):
    pass
