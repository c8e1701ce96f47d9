"""Exception types raised by catbin."""


class CatbinError(Exception):
    """Base class for all catbin errors."""


class InvalidLabel(CatbinError, ValueError):
    """A category label lies outside 1..K."""


class ShapeError(CatbinError, ValueError):
    """Array shapes do not conform."""


class InvalidSpec(CatbinError, ValueError):
    """Inconsistent simulation or run settings."""


class NumericalFailure(CatbinError, ArithmeticError):
    """A numerical routine broke down (e.g. a non-SPD precision matrix)."""


class InvalidCovariance(NumericalFailure):
    """A matrix that must be symmetric positive definite is not."""
