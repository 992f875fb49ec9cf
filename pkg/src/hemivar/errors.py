"""Exception hierarchy shared by the solver, the contact model and the CLI."""


class HemivarError(Exception):
    """Base class for all package errors."""


class ValidationError(HemivarError, ValueError):
    """Input data violates a structural or admissibility constraint."""


class NonContractive(ValidationError):
    """Smallness condition alpha + beta < m fails; the fixed-point map is not a contraction."""


class SmallnessViolated(NonContractive):
    """Contact data give (mu + 1) * |gamma|^2 >= m_F."""


class ParameterOutsideLambda(ValidationError):
    """Parameter vector is not in the admissible parameter set."""


class EmptyAdmissibleSet(ValidationError):
    """The control constraint set F(eta) is empty."""


class NegativeThickness(ValidationError):
    """A thickness value g < 0 was supplied."""


class EmptyClampedBoundary(ValidationError):
    """The clamped part of the boundary has zero measure."""


class NonconformingMesh(ValidationError):
    """Mesh has hanging nodes, over-shared faces or degenerate elements."""


class InfeasiblePoint(HemivarError, ValueError):
    """A point passed for residual evaluation lies outside the feasible set."""


class SolverError(HemivarError, RuntimeError):
    """Base class for numerical failures."""


class InnerSolveFailed(SolverError):
    """Inner convex subproblem hit its iteration cap above tolerance."""


class MaxIterations(SolverError):
    """An iteration cap was reached before the tolerance."""


class InsufficientHistory(SolverError):
    """Too few outer iterations to estimate a contraction factor."""
