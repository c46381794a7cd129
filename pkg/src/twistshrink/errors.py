"""Exception types shared across the package."""


class TwistShrinkError(Exception):
    """Base class for all errors raised by twistshrink."""


class ConfigError(TwistShrinkError, ValueError):
    """Invalid configuration, unknown preset or malformed expression."""


class PositivityError(TwistShrinkError):
    """The diffusion coefficient is not strictly positive at a visited point.

    ``t`` and ``x`` locate the failure; ``partial`` optionally carries the
    part of a path simulated before the abort.
    """

    def __init__(self, message, t=None, x=None, partial=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.partial = partial


class RangeError(TwistShrinkError):
    """Evaluation outside the solved range, or numeric overflow."""


class HorizonError(TwistShrinkError, ValueError):
    """A time beyond the horizon covered by a walk was requested."""


class ResourceError(TwistShrinkError):
    """Not enough random-walk steps were available to cover the horizon."""

    def __init__(self, message, level=None, shortfall=None):
        super().__init__(message)
        self.level = level
        self.shortfall = shortfall
