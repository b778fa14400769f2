"""Exception hierarchy shared by all modules."""


class AlphaScaleError(Exception):
    """Base class for every error raised by this package."""


class DomainError(AlphaScaleError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionError(AlphaScaleError, ValueError):
    """Array or spectrum shapes do not agree."""


class RangeError(AlphaScaleError, ValueError):
    """A query lies outside the tabulated range (no extrapolation)."""


class ConfigurationError(AlphaScaleError, ValueError):
    """Invalid or inconsistent configuration."""


class ParseError(AlphaScaleError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)


class TableFormatError(AlphaScaleError, IOError):
    """A persisted material table cannot be decoded."""


class ChecksumError(TableFormatError):
    pass


class TruncatedFileError(TableFormatError):
    pass


class UnsupportedVersionError(TableFormatError):
    pass


class IncompleteTableError(AlphaScaleError, RuntimeError):
    """The table has nodes that failed or were never simulated."""


class InfeasibleError(AlphaScaleError, RuntimeError):
    """No lattice point satisfies the lightness constraint.

    ``best`` holds the point with the smallest constraint slack as a
    ``(sigma_a, sigma_s, slack)`` tuple.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NonIdentifiableError(AlphaScaleError, ValueError):
    """The data cannot determine the model parameters."""


class ConvergenceError(AlphaScaleError, RuntimeError):
    pass
