"""Exception types shared by the compiled and pure-Python cores."""

from __future__ import annotations


class BBMError(Exception):
    """Base class for every error raised by bbmlab."""


class ConfigError(BBMError, ValueError):
    """Invalid configuration or argument outside an operation's domain."""


class ParticleLimitExceeded(BBMError, RuntimeError):
    """The live population grew past ``hard_particle_limit``."""

    def __init__(self, limit: int, time: float):
        self.limit = int(limit)
        self.time = float(time)
        super().__init__(
            f"hard_particle_limit={self.limit} exceeded at time t={self.time:.6g}"
        )


class EmptyPopulation(BBMError, ValueError):
    """A statistic needed at least one live particle (usually over-aggressive pruning)."""


class CheckpointError(BBMError):
    """Base class for checkpoint file problems."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class StatisticalFailure(BBMError):
    """An experiment's acceptance assertion did not hold (CLI ``--assert``)."""
