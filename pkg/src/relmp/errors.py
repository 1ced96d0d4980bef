"""Exception types shared across the package.

Every failure raised on purpose derives from RelmpError so callers can catch
one base class at the boundary (the CLI maps these onto exit codes).
"""


class RelmpError(Exception):
    """Base class for all deliberate failures."""


class ShapeError(RelmpError):
    """Operands have incompatible dimensions."""


class ConfigError(RelmpError):
    """A configuration value is structurally invalid (bad kernel size, bad mode)."""


class ContractError(RelmpError):
    """A precondition of an operation was violated by the caller."""


class NumericError(RelmpError):
    """A computation produced a non-finite value."""


class DataError(RelmpError):
    """An input file or record is malformed."""


class GraphError(RelmpError):
    """A graph construction rule was violated (range, duplicate edge)."""
