"""Exception types raised across the package."""


class LocRelError(Exception):
    """Base class for all package errors."""


class ValidationError(LocRelError, ValueError):
    """A configuration or argument violates a documented invariant."""


class ParseError(LocRelError):
    """A configuration or artifact file could not be parsed."""


class DegenerateGeometry(LocRelError, ValueError):
    """The UE is (numerically) co-located with a base station."""


class SingularModel(LocRelError):
    """The signal model cannot separate the two paths."""


class IllConditioned(LocRelError):
    """A Fisher information matrix is numerically singular."""


class InsufficientSamples(LocRelError, ValueError):
    """Too few Monte-Carlo samples to resolve the requested quantile."""


class QuantileUnresolvable(InsufficientSamples):
    pass


class OutOfMapRange(LocRelError, ValueError):
    """A query lies outside the radio map's grid."""


class NonMonotoneSelector(LocRelError):
    """The outage region of a selector is not a single interval."""


class Infeasible(LocRelError):
    """No parameter value satisfies the meta-probability constraint."""


class InvalidDomain(LocRelError, ValueError):
    """An analytic expression is evaluated outside its validity range."""
