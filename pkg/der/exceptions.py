"""
Errors raised by the Dynamic Experience Replay app.

Every error derives from `DerError` so management commands can turn any of them
into a `CommandError` in one place.
"""

from django.core.exceptions import ImproperlyConfigured


class DerError(Exception):
    """Base class for every domain error of the app."""


class InvalidVector(DerError, ValueError):
    """A vector has the wrong length or carries a non-finite entry."""


class NotReadyToTrain(DerError):
    """Sampling was requested from a buffer that holds no transitions."""


class InsufficientDemonstrations(DerError, ImproperlyConfigured):
    """The buffer structure needs more demonstrations than were provided."""


class RejectedEpisode(DerError, ValueError):
    """An episode breaks an episode rule: it is longer than T_max, or it failed where only successes are kept."""


class EnvironmentFault(DerError):
    """The environment was driven with a non-finite action or reached a broken state."""


class DemonstratorFailure(DerError):
    """The scripted demonstrator kept failing; the environment is probably misconfigured."""


class CheckpointError(DerError):
    """A parameter file does not match the expected layout."""
