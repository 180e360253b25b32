"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class InsufficientDataError(ValueError):
    """Too few samples for the requested statistic."""


class NotSPDError(ValueError):
    """A matrix failed symmetric positive definite validation."""


class NotSymmetricError(ValueError):
    """A matrix expected to be symmetric is not."""


class ConvergenceError(RuntimeError):
    """An iterative procedure hit its iteration cap.

    The final residual is kept on ``residual``.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ExtrapolationError(RuntimeError):
    """Every mixture component assigns negligible weight to the query input."""


class SingularConfigurationError(RuntimeError):
    """The robot Jacobian (or inertia) is singular at the given configuration."""


class SchemaError(ValueError):
    """A document or config failed validation."""


class ControllerError(RuntimeError):
    """A controller failed during a closed-loop run.

    Carries the step index and the last diagnostics.
    """

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}
