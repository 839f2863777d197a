"""Exception hierarchy.

Every failure carries a short diagnostic; the driver attaches the step index.
"""

from __future__ import annotations


class KamError(Exception):
    """Base class for all kamiter errors."""

    step: int | None = None

    def with_step(self, step: int) -> "KamError":
        self.step = step
        return self


class DimensionMismatch(KamError, ValueError):
    pass


class BoundaryTooClose(KamError):
    """Target sits too close to f(boundary) for the current sampling."""

    ratio: float = 0.0


class UnsupportedDimension(KamError):
    pass


class SmallDivisorBreach(KamError):
    pass


class SafetyMarginBreach(KamError):
    pass


class LieSeriesStalled(KamError):
    pass


class ShiftTooLarge(KamError):
    pass


class DegreeVanished(KamError):
    """No box with nonzero degree: the frequency equation has no certified root."""


class OutsideSearchBox(KamError):
    pass


class EpsilonTooLarge(KamError):
    pass


class OrderTooLow(KamError):
    pass


class Diverged(KamError):
    pass


class BoundViolated(KamError):
    """A paper-mode norm bound failed on the measured majorant."""


class ConfigError(KamError, ValueError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


# errors that mean "this model has no frequency-preserving torus", not a bug
INFEASIBLE = (DegreeVanished, OutsideSearchBox)


class ResidualTooLarge(KamError):
    """The frequency equation was not solved to tolerance in the previous step."""
