"""Exception classes shared across the package.

Plain ``ValueError`` is used for invalid arguments; the classes here exist so
the CLI can map failure classes to distinct exit codes.
"""


class DataError(ValueError):
    """Dataset could not be loaded or does not match the run configuration."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or numerically unusable values."""
