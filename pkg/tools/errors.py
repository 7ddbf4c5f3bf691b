"""
Exception types raised across the lab.

All of them derive from ``LabError``, itself a ``ValueError``, so callers that
only care about "bad input" can keep catching ``ValueError``.
"""


class LabError(ValueError):
    """Base class for every error raised by the lab."""


class DimensionMismatchError(LabError):
    """Two objects that must share a dimension do not."""


class WindowError(LabError):
    """A time window or horizon argument is out of range."""


class ProbabilityError(LabError):
    """Transition probabilities or compensator masses are inconsistent."""


class NotMartingaleError(LabError):
    """A process expected to be a martingale fails the node-wise check."""


class GeneratorError(LabError):
    """Generator evaluation or its Lipschitz data is unusable."""


class BracketError(LabError):
    """A minimisation bracket does not contain a minimum."""


class SelectionError(LabError):
    """No index of a sequence satisfies the contraction threshold."""


class UnknownProblemError(LabError):
    """A problem, payoff or generator name is not registered."""


class ConfigError(LabError):
    """Configuration is missing, unreadable or carries unknown keys."""


class TableShapeError(LabError):
    """A doubly-indexed table is too small or inconsistently indexed."""
