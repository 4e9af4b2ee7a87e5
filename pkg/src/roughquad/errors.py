"""Exception types raised by the solvers.

Every numerical failure is a subclass of :class:`NumericalFailure` so that
callers (and the command line runner) can map them to a single exit code.
"""


class RoughQuadError(Exception):
    """Base class for all library errors."""


class NumericalFailure(RoughQuadError):
    """A computation could not reach its stated accuracy."""


class HypothesisViolated(RoughQuadError):
    """The scenario does not satisfy the structural hypotheses of an operation."""


class CovarianceNotPD(NumericalFailure):
    """Dense covariance factorization failed."""


class NonSymmetric(RoughQuadError):
    """A block that must be symmetric is not."""


class NoContraction(NumericalFailure):
    """Picard iteration did not converge within the iteration budget."""


class QuadratureUnderResolved(NumericalFailure):
    """Doubling the quadrature subgrid changed the result beyond tolerance."""


class NotSiegel(NumericalFailure):
    """A matrix expected in the Siegel upper half space is not there."""


class DegenerateHessian(NumericalFailure):
    """The Gaussian integral over phase space is singular."""


class BranchLost(NumericalFailure):
    """Continuous square-root tracking saw a phase jump too large to follow."""


class Caustic(NumericalFailure):
    """The position-momentum block of the flow is (nearly) singular."""


class UnderResolved(NumericalFailure):
    """The spatial grid cannot represent the kernel application accurately."""


class NotCauchy(NumericalFailure):
    """Successive mollified solutions do not form a Cauchy sequence."""


class StepRejected(NumericalFailure):
    """A nonlinear macro step violated mass conservation."""


class SymplecticityLost(NumericalFailure):
    """Round-off destroyed the symplectic structure beyond what projection can repair."""
