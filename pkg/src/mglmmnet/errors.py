"""Exception hierarchy.

The CLI maps :class:`InputError` (and subclasses) to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class MglmmError(Exception):
    """Base class for all package errors."""


class InputError(MglmmError, ValueError):
    """Malformed data, configuration or arguments."""


class DomainError(InputError):
    """A value lies outside a family's support or mean domain."""


class ParameterError(InputError):
    """A model parameter is outside its admissible range."""


class UnsupportedModelError(InputError):
    """The requested model is outside the supported class (e.g. non-chordal graph)."""


class StateError(MglmmError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class NumericalError(MglmmError, ArithmeticError):
    """A numerical procedure failed."""


class SeriesConvergenceError(NumericalError):
    """The compound-Poisson series did not converge within the term cap."""

    def __init__(self, message, *, y=None, power=None, dispersion=None, terms=None):
        super().__init__(message)
        self.y = y
        self.power = power
        self.dispersion = dispersion
        self.terms = terms
