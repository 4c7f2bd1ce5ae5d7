"""Exception hierarchy shared by every subsystem."""


class CsiFmError(Exception):
    """Base class for all package errors."""


class ConfigError(CsiFmError, ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(CsiFmError, ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(CsiFmError, ArithmeticError):
    """NaN/inf encountered where finite values are required."""


class FormatError(CsiFmError, ValueError):
    """A file on disk does not match the expected binary layout or version."""


class DependencyError(CsiFmError, RuntimeError):
    """A prerequisite artifact (checkpoint, dataset) is missing."""
