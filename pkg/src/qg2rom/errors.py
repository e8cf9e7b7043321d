"""Exception types shared across the package."""


class Qg2RomError(Exception):
    """Base class for all package errors."""


class ConfigurationError(Qg2RomError):
    """Invalid configuration (bad grid spec, time step, schema violation, ...)."""


class DomainError(Qg2RomError):
    """Operation called with arguments outside its mathematical domain."""


class SequencingError(Qg2RomError):
    """Pipeline stages invoked out of order (e.g. layer-2 RHS before psi1 solve)."""


class SolverError(Qg2RomError):
    """Iterative linear solver failed to converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FormatError(Qg2RomError):
    """Malformed binary or sidecar file."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class TrainingError(Qg2RomError):
    """LSTM training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class UsageError(Qg2RomError):
    """API misuse (missing scaler, missing artifacts, ...)."""
