"""Exception hierarchy shared by all modules."""


class DmpkError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DmpkError, ValueError):
    """Matrix shape is not square with even dimension, or shapes disagree."""


class GroupMembershipError(DmpkError, ValueError):
    """Matrix is not pseudo-unitary to the requested tolerance."""


class NumericError(DmpkError, ArithmeticError):
    """Non-finite entries encountered."""


class ContractError(DmpkError, ValueError):
    """Caller violated a documented precondition."""


class DomainError(DmpkError, ValueError):
    """Parameter outside the domain where the computation is defined."""


class DegeneracyError(DmpkError, ValueError):
    """Transmission eigenvalues closer than the gap floor."""


class EvanescentModeError(DmpkError, ValueError):
    """Some transverse channel has no real longitudinal wavevector."""


class ConditioningError(DmpkError, ValueError):
    """A matrix that must be inverted is numerically singular."""


class ResourceError(DmpkError, RuntimeError):
    """A requested computation exceeds the configured size guard."""


class UnsupportedClassError(DmpkError, ValueError):
    """Symmetry class not supported by the requested operation."""


class ConfigError(DmpkError, ValueError):
    """Invalid run configuration."""
