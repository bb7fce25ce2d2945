"""Exception hierarchy shared by all modules."""


class GbcalibError(Exception):
    """Base class for library errors."""


class ValidationError(GbcalibError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(GbcalibError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class DimensionMismatch(ValidationError):
    pass


class BadLevel(ValidationError):
    pass


class TooFewGroups(ValidationError):
    pass


class TooFewReps(ValidationError):
    pass


class EmptyDraws(ValidationError):
    pass


class NotPsd(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass
