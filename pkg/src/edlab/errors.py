"""Exception hierarchy.

Errors fall into families that the CLI maps onto exit codes: input problems
(bad parameters, shapes, configs), numerical failures (instability,
degenerate densities, escaped trajectories) and missed tolerances.
"""

from __future__ import annotations


class EdlabError(Exception):
    """Base class for all edlab errors."""


class InputError(EdlabError, ValueError):
    """Invalid user input: parameters, shapes, insufficient history."""


class ValidationError(InputError):
    """A named field failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(InputError):
    pass


class DomainError(InputError):
    pass


class StatisticsError(InputError):
    """Too few samples for the requested estimate."""


class DesignError(InputError):
    """A study design that cannot answer its question (too few N values, ...)."""


class NumericalError(EdlabError, ArithmeticError):
    """Base class for failures of the numerics themselves."""


class StepSizeError(NumericalError):
    """Time step violates a stability bound."""


class DegenerateDensityError(NumericalError):
    pass


class SchemeFailure(NumericalError):
    """A step produced an unphysical state (negative density, NaN, ...)."""


class EscapeError(NumericalError):
    """Too many trajectories left the guidance grid."""


class ToleranceError(EdlabError):
    """A computed quantity missed its tolerance (e.g. integrator energy drift)."""
