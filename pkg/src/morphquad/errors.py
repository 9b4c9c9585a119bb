"""Exception types raised across the package."""


class MorphQuadError(Exception):
    """Base class for all package errors."""


class DomainError(MorphQuadError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class InvalidConfigError(MorphQuadError, ValueError):
    """A configuration or layout is internally inconsistent."""


class InvalidGeometryError(InvalidConfigError):
    """A component shape or placement is physically impossible."""


class CalibrationError(MorphQuadError):
    """Layout fit could not reach its targets.

    ``breakdown`` maps each target name to its residual.
    """

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = dict(breakdown or {})


class IntegrationDivergedError(MorphQuadError, ArithmeticError):
    """The integrator produced a non-finite state."""


class SolverError(MorphQuadError):
    """The NMPC or QP solver failed; ``diagnostics`` carries details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ControllerError(MorphQuadError):
    """A baseline controller could not compute a command."""
