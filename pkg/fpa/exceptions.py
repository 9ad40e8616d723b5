"""
Exceptions - Error types shared across the fidelity lab

Every failure the CLI can report maps onto one of these classes. The CLI turns
them into exit codes (see cli.EXIT_CODES).
"""


class FidelityError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FidelityError, ValueError):
    """Invalid or unreadable experiment configuration."""


class DataError(FidelityError):
    """Unreadable, inconsistent or unusable input data."""


class BadMagicError(DataError):
    """IDX file does not start with the expected magic number."""


class TruncatedFileError(DataError):
    """IDX file ends before the advertised payload."""


class CountMismatchError(DataError):
    """Image and label files disagree on the number of samples."""


class ZeroVarianceError(DataError):
    """A channel has zero standard deviation, z-scoring is undefined."""


class ArtifactMismatchError(DataError):
    """Two artifacts on disk were produced from different runs or settings."""


class ShapeMismatchError(FidelityError, ValueError):
    """Operand shapes are incompatible for an operation."""


class IncompatibleLayersError(ShapeMismatchError):
    """A layer chain does not compose for the configured input size."""


class DivergenceError(FidelityError):
    """Training loss became non-finite or exceeded the divergence threshold."""


class DoubleMultiplicationError(FidelityError, ValueError):
    """Input-product reduction requested for a map that already includes the input."""


class GridMismatchError(FidelityError, ValueError):
    """Perturbation curves were computed on different fraction grids or samples."""
