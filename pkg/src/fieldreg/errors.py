"""Exception types shared across the package.

The command line tool maps these onto exit codes, so library code should
raise the most specific class that applies: bad user-supplied values are
ParameterError or ConfigError, malformed or inconsistent files are
DataFormatError, and conditions that make a result mathematically
meaningless (zero variance, empty overlap, non-finite objective) are
UndefinedMetricError or NumericalError.
"""


class FieldregError(Exception):
    """Base class for all errors raised by this package."""


class GridError(FieldregError):
    """Degenerate grid geometry or mismatched volume geometries."""


class ParameterError(FieldregError):
    """Invalid parameter value (gamma out of range, singular matrix, ...)."""


class ConfigError(FieldregError):
    """Invalid stage configuration or pipeline description."""


class DataFormatError(FieldregError):
    """Malformed or inconsistent input file."""


class UndefinedMetricError(FieldregError):
    """Similarity value is undefined for the given inputs."""


class NumericalError(FieldregError):
    """Numerical failure: non-finite values where finite ones are required."""
