"""Exception hierarchy shared by every module of the package."""


class RoseError(Exception):
    """Base class for all package errors."""


class DimensionError(RoseError, ValueError):
    """Operand shapes are incompatible."""


class LengthError(RoseError, ValueError):
    """A sequence is too short (or too long) for the requested operation."""


class ContractError(RoseError, RuntimeError):
    """An API precondition was violated by the caller."""


class ConfigError(RoseError, ValueError):
    """Invalid configuration values or flag combinations."""


class FormatError(RoseError, ValueError):
    """A file does not follow the expected on-disk format."""


class DegenerateInputError(RoseError, ValueError):
    """Input is numerically degenerate (e.g. a silent signal where power is needed)."""


class NumericAbort(RoseError, FloatingPointError):
    """A non-finite value appeared during optimisation."""
