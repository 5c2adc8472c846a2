"""Exception and warning types raised across the package."""


class SagnacError(Exception):
    """Base class for all errors raised by sagnacsim."""


class UnknownParameterName(SagnacError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown perturbation parameter {self.name!r}"


class NonUnitDirection(SagnacError, ValueError):
    pass


class IntegrationFailure(SagnacError, RuntimeError):
    pass


class NoBracket(SagnacError, RuntimeError):
    """The timing objective has no interior extremum on the search window."""


class SingularM(SagnacError, ValueError):
    pass


class Diverged(SagnacError, RuntimeError):
    pass


class AmbiguousFit(SagnacError, ValueError):
    def __init__(self, message, candidates=None):
        super().__init__(message)
        self.candidates = candidates or []


class DegenerateConic(SagnacError, ValueError):
    pass


class InsufficientData(SagnacError, ValueError):
    pass


class ConfigError(SagnacError, ValueError):
    pass


class IndependentGroupsWarning(UserWarning):
    """An active parameter subset mixes the horizontal and vertical groups."""
