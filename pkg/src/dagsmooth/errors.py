"""Exception hierarchy shared by every dagsmooth module."""


class DagSmoothError(Exception):
    """Base class for all library errors."""


class CycleDetected(DagSmoothError, ValueError):
    pass


class IndexOutOfRange(DagSmoothError, IndexError):
    pass


class DuplicateEdge(DagSmoothError, ValueError):
    pass


class DomainError(DagSmoothError, ValueError):
    """Argument outside the domain of a distribution function."""


class NumericalInstability(DagSmoothError, ArithmeticError):
    """Closed form is unreliable here; caller should use the Monte Carlo path."""


class SpecMismatch(DagSmoothError, ValueError):
    pass


class AlignmentError(DagSmoothError, ValueError):
    pass


class ConstraintViolation(DagSmoothError, ValueError):
    pass


class InvalidRecipe(DagSmoothError, ValueError):
    pass


class ConfigError(DagSmoothError, ValueError):
    pass


class InputError(DagSmoothError, ValueError):
    """Base class for malformed input files."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingNode(InputError):
    pass


class DuplicateNode(InputError):
    pass


class OutOfRange(InputError):
    pass
