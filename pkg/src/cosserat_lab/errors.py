"""Exception types raised across the package."""


class CosseratError(Exception):
    """Base class for all package errors."""


class InvariantViolation(CosseratError, ValueError):
    """Input does not satisfy a domain-type invariant (e.g. not a rotation)."""


class DegenerateInputError(CosseratError, ValueError):
    pass


class DomainError(CosseratError, ValueError):
    """Ball, shell or radius does not fit inside the grid box."""


class PreconditionError(CosseratError, ValueError):
    pass


class DataError(CosseratError, ValueError):
    """Non-finite values in a field."""


class DegeneratePointError(CosseratError, ArithmeticError):
    """The unregularized p-Laplacian is evaluated where the gradient vanishes."""


class SolverFailure(CosseratError, RuntimeError):
    """An iterative linear or eigen solver did not converge."""

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace


class StagnationError(CosseratError, RuntimeError):
    """Armijo backtracking exhausted without sufficient decrease."""

    def __init__(self, message, step=None, energy=None, slope=None):
        super().__init__(message)
        self.step = step
        self.energy = energy
        self.slope = slope


class PartialResult(CosseratError, RuntimeError):
    """Minimization stopped before reaching tolerance; carries the best state."""

    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


class CalibrationFailure(CosseratError, RuntimeError):
    pass


class ConfigError(CosseratError, ValueError):
    pass
