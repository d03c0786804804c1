"""Exception taxonomy shared across the library.

Every error raised by this package derives from :class:`NeuropgmError`
so callers can catch one base class at the boundary.  The CLI maps the
subclasses onto its exit-code contract (usage 1, data 2, solver 3).
"""

__all__ = [
    "NeuropgmError",
    "NotSPD",
    "DimensionMismatch",
    "BadShape",
    "BadSpec",
    "RankDeficient",
    "DegenerateNoise",
    "NonPositiveWidth",
    "SolverFailure",
    "DataFormatError",
    "BadMagic",
    "TruncatedFile",
    "NonNumericCell",
    "ConfigError",
]


class NeuropgmError(Exception):
    """Base class for all errors raised by this package."""


class NotSPD(NeuropgmError):
    """A matrix required to be symmetric positive definite is not."""


class DimensionMismatch(NeuropgmError):
    """Operand dimensions are inconsistent with the requested operation."""


class BadShape(DimensionMismatch):
    """A data matrix has a shape the model cannot accept."""


class BadSpec(NeuropgmError):
    """A simulation or model specification violates its invariants."""


class RankDeficient(NeuropgmError):
    """An input matrix is numerically rank deficient."""


class DegenerateNoise(NeuropgmError):
    """A noise variance collapsed below the representable floor.

    Usually a sign that the factor count is too large for the data.
    """


class NonPositiveWidth(NeuropgmError):
    """A radial basis width must be strictly positive."""


class SolverFailure(NeuropgmError):
    """An iterative solver failed to make progress.

    Fitters that can do so return the best-so-far model flagged as not
    converged instead of raising; this error is reserved for cases with
    nothing useful to return.
    """


class DataFormatError(NeuropgmError):
    """Base class for file parsing failures."""


class BadMagic(DataFormatError):
    """A binary matrix file does not start with the expected magic bytes."""


class TruncatedFile(DataFormatError):
    """A binary matrix file ends before its declared payload."""


class NonNumericCell(DataFormatError):
    """A CSV cell could not be parsed as a number."""


class ConfigError(NeuropgmError):
    """A configuration file violates the config grammar or schema."""
