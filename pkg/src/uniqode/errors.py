"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
identifiability failures exit 3, data problems exit 4.
"""


class UniqodeError(Exception):
    exit_code = 1


class ConfigurationError(UniqodeError, ValueError):
    exit_code = 2


class ShapeError(UniqodeError, ValueError):
    exit_code = 2


class UsageError(UniqodeError, ValueError):
    exit_code = 2


class DataError(UniqodeError, ValueError):
    exit_code = 4


class IntegrationBlowupError(UniqodeError, ArithmeticError):
    """Raised when RK4 produces a non-finite state; carries the time it happened."""

    exit_code = 4

    def __init__(self, time: float, message: str | None = None):
        self.time = time
        super().__init__(message or f"non-finite state encountered at t={time!r}")


class DivergenceError(UniqodeError, ArithmeticError):
    exit_code = 4

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"loss became non-finite at epoch {epoch}")


class IdentifiabilityError(UniqodeError):
    """A theorem hypothesis fails for the supplied data."""

    exit_code = 3


class DegeneratePairError(IdentifiabilityError):
    pass


class GZeroError(IdentifiabilityError):
    pass


class UnboundedCertificateError(IdentifiabilityError):
    pass
