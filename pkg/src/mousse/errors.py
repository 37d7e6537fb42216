"""Exception types shared across the package."""


class MousseError(Exception):
    """Base class for all package-specific errors."""


class RankDeficient(MousseError):
    """Projection or orthonormalization hit a numerically singular system.

    Raised when an observation has fewer observed entries than the subset
    dimension, when the observed-rows Gram matrix is singular beyond the
    ridge, or when a basis loses column rank during orthonormalization.
    Callers streaming data should skip the sample rather than abort.
    """


class InsufficientData(MousseError):
    """Batch initialization was asked to fit more structure than the data supports."""


class DepthLimit(MousseError):
    """A split would exceed the configured maximum tree depth."""


class SiblingNotLeaf(MousseError):
    """A merge was requested but the sibling node is internal."""


class NotCalibrated(MousseError):
    """The GLR detector was updated before a baseline (mu0, sigma0) was set."""


class DegenerateBaseline(MousseError):
    """Baseline residuals have (numerically) zero spread."""


class NoBracket(MousseError):
    """Threshold solve target lies outside the achievable bracket."""


class ConfigError(MousseError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class DataError(MousseError):
    """Malformed stream data (CLI exit code 3)."""

