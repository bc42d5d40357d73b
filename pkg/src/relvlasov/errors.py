"""Exception types raised by the simulator."""


class RelVlasovError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RelVlasovError, ValueError):
    pass


class SingularityError(RelVlasovError, ValueError):
    """Singular kernel evaluated at the origin."""


class OutOfDomainError(RelVlasovError, ValueError):
    pass


class BlowUpError(RelVlasovError):
    """Velocity exceeded the configured guard.

    ``state`` holds the last finite phase-space state and ``time`` the
    time it was reached, so callers can keep partial results.
    """

    def __init__(self, message, time=None, state=None, step=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.step = step


class NumericalFailure(RelVlasovError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ValidationError(RelVlasovError):
    """Initial data violates an admissibility condition."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConfigError(RelVlasovError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
