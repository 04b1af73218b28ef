"""Exception types shared across the package."""


class CompflowError(Exception):
    """Base class for all package errors."""


class ScenarioError(CompflowError, ValueError):
    """A scenario file failed to parse or validate."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class InstabilityError(CompflowError, ValueError):
    """A queue would be loaded at or above its service rate."""


class InfeasibleError(CompflowError, ValueError):
    """No operating point satisfies the flow and stability constraints."""


class SingularSystemError(CompflowError, ValueError):
    """A linear system in the flow equations is singular or divergent."""


class ConvergenceError(CompflowError, RuntimeError):
    """An iterative method did not reach its tolerance."""
