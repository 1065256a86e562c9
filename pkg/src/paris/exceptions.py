"""Exception types raised across the package."""


class ParisError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(ParisError):
    """A matrix expected to be positive definite is not.

    Raised when a Cholesky pivot is non-positive. Usually means the ridge
    penalty is too small or the Gram matrix is degenerate.
    """


class DowndateBreaksPD(ParisError):
    """A rank-one downdate would destroy positive definiteness.

    Callers are expected to fall back to a full refactorization of the
    reduced matrix.
    """


class NotConverged(ParisError):
    """An iterative solver did not reach the requested tolerance.

    Attributes
    ----------
    residual : float
        The relative residual achieved by the best iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonFiniteLoss(ParisError):
    """Training loss became NaN/Inf; usually a too-large learning rate."""


class DatasetExhausted(ParisError):
    """Pruning was asked to remove points from a set that is too small."""


class LengthMismatch(ParisError):
    """Two paired vectors have different lengths."""


class MissingColumn(ParisError):
    """A declared column is absent from an input file."""


class UnparseableRow(ParisError):
    """A row of an input file could not be parsed.

    Attributes
    ----------
    line_number : int
        1-based line number in the source file.
    """

    def __init__(self, message, line_number=-1):
        super().__init__(message)
        self.line_number = line_number


class EmptyGroup(ParisError):
    """Ingestion produced a group (or a whole file) with no usable rows."""


class GroupTooShort(ParisError):
    """A group is too short to produce a single window."""


class InsufficientGroups(ParisError):
    """Fold construction needs more groups than the dataset provides."""


class ConfigError(ParisError):
    """A run configuration is invalid (unknown key, bad value, ...)."""
