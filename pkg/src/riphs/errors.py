"""Exception hierarchy shared by all riphs modules."""


class RiphsError(Exception):
    """Base class for every error raised by this package."""


class DomainViolation(RiphsError):
    """A state left the model's admissible domain."""


class NonFinite(RiphsError):
    """A generating function or integrator produced NaN or infinity."""


class DimensionMismatch(RiphsError, ValueError):
    pass


class InvalidParams(RiphsError, ValueError):
    pass


class BlowUp(RiphsError):
    """State norm exceeded the configured cap during integration."""


class InconsistentTrajectory(RiphsError, ValueError):
    pass


class MaxIterations(RiphsError):
    pass


class Infeasible(RiphsError):
    """No start of a constrained solve reached the feasibility tolerance."""


class NonPositiveDistance(RiphsError, ValueError):
    pass


class SolverFailed(RiphsError):
    """An OCP solve inside the receding-horizon loop failed."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ParseError(RiphsError):
    pass


class ValidationError(RiphsError, ValueError):
    """Config validation failure; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
