"""Exception hierarchy shared by every module."""


class WassbaryError(Exception):
    """Base class for library errors."""


class DomainError(WassbaryError, ValueError):
    """An argument lies outside the domain of an operation."""


class ShapeError(WassbaryError, ValueError):
    """Dimensions of two operands do not agree."""


class RepresentationError(WassbaryError, TypeError):
    """Operands use measure/map representations that cannot be combined."""


class ConditioningError(WassbaryError, ArithmeticError):
    """A matrix is singular or too badly conditioned to proceed.

    The smallest eigenvalue found is kept on ``smallest_eigenvalue``.
    """

    def __init__(self, message, smallest_eigenvalue=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class CapacityError(WassbaryError, ValueError):
    """A discrete problem exceeds the configured size cap."""


class CollisionWarning(UserWarning):
    """Averaged support points coincided and their weights were merged."""


class ParseError(WassbaryError, ValueError):
    """An input file does not describe a valid measure, map or config.

    ``path`` and ``line`` locate the problem when they are known.
    """

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
