"""Exception hierarchy shared by all subpackages."""


class DfmupError(Exception):
    """Base class for errors raised by dfmup."""


class ParameterError(DfmupError, ValueError):
    """Invalid argument or inconsistent parameters."""


class DataError(DfmupError, ValueError):
    """Data cannot be processed (degenerate statistics, non-positive values...)."""


class FormatError(DfmupError, ValueError):
    """Malformed, truncated or incompatible file."""


class VersionError(FormatError):
    """File written by an unsupported format version."""


class ConfigError(DfmupError, ValueError):
    """Invalid run configuration."""


class SolverError(DfmupError, RuntimeError):
    """Iterative solve did not converge."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class EmbeddingError(DfmupError, RuntimeError):
    """Circulant embedding produced a spectrum that is not positive semi-definite."""
