"""Exception types shared across the package.

The CLI maps these onto exit codes: usage and I/O problems exit with 1,
numerical failures during optimization exit with 2.
"""


class PyramidregError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PyramidregError, ValueError):
    """A configuration value violates its constraint."""


class ShapeError(PyramidregError, ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(PyramidregError, ValueError):
    """A NaN or infinity appeared where finite values are required."""


class DegenerateCloudError(PyramidregError, ValueError):
    """A point cloud is empty or has a zero-size bounding box."""


class FileFormatError(PyramidregError, ValueError):
    """An input file does not conform to its expected format."""


class NumericalError(PyramidregError, RuntimeError):
    """Optimization produced a non-finite cost or gradient."""
