"""Exception types shared across the toolkit."""

from __future__ import annotations

__all__ = [
    "SlowManifoldError",
    "DivergenceError",
    "RootFindError",
    "DegeneracyError",
    "PrecisionLossError",
    "NumericalError",
    "BracketError",
    "FitError",
    "TangentSingularityError",
]


class SlowManifoldError(Exception):
    """Base class for numerical failures raised by this package."""


class DivergenceError(SlowManifoldError):
    """A trajectory or iteration produced a non-finite state.

    Carries whatever partial information was available at the point of
    failure: ``step_index`` for integrator blow-ups, ``trace`` for
    iteration blow-ups.
    """

    def __init__(self, message, *, step_index=None, trace=None):
        super().__init__(message)
        self.step_index = step_index
        self.trace = trace


class RootFindError(SlowManifoldError):
    """Newton iteration for a manifold root failed to converge."""


class DegeneracyError(SlowManifoldError):
    """A Jacobian that must be invertible is singular."""


class PrecisionLossError(SlowManifoldError):
    """Nested differencing cannot be carried out at usable precision."""


class NumericalError(SlowManifoldError):
    """Dense linear algebra failed (eigensolver, Newton block solve)."""


class BracketError(SlowManifoldError):
    """A bisection bracket does not contain a stability transition."""


class FitError(SlowManifoldError):
    """Too few usable measurements for a least-squares order fit."""


class TangentSingularityError(SlowManifoldError, ValueError):
    """Angle too close to pi/2 or 3pi/2 for tan(theta) to be meaningful."""
