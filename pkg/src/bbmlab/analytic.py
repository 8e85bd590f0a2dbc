"""Closed-form helpers: Gaussian CDF/density, the front centering and the path envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass

from bbmlab.errors import ConfigError

SQRT2 = math.sqrt(2.0)
LOG_CORRECTION = 3.0 / (2.0 * SQRT2)


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    return value


def normal_cdf(z: float) -> float:
    """Standard normal distribution function, absolute error below 1e-15."""
    z = _finite("z", z)
    return 0.5 * math.erfc(-z / SQRT2)


def gaussian_density(t: float, x: float) -> float:
    """Density at ``x`` of a centred Gaussian with variance ``t``."""
    t = _finite("t", t)
    if t <= 0:
        raise ConfigError(f"variance t must be positive, got {t}")
    x = _finite("x", x)
    return math.exp(-x * x / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def centering(t: float) -> float:
    """Deterministic front position sqrt(2) t - 3/(2 sqrt 2) log t."""
    t = _finite("t", t)
    if t <= 0:
        raise ConfigError(f"centering needs t > 0, got {t}")
    return SQRT2 * t - LOG_CORRECTION * math.log(t)


@dataclass(frozen=True)
class EnvelopeParams:
    t: float
    alpha: float
    s: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t > 0):
            raise ConfigError(f"t must be positive, got {self.t}")
        if not 0 < self.alpha <= 0.5:
            raise ConfigError(f"alpha must lie in (0, 1/2], got {self.alpha}")
        if not 0 <= self.s <= self.t:
            raise ConfigError(f"s={self.s} outside [0, t={self.t}]")


def envelope(p: EnvelopeParams) -> float:
    """min(s, t - s) ** alpha."""
    return min(p.s, p.t - p.s) ** p.alpha


def envelope_value(t: float, alpha: float, s: float) -> float:
    return envelope(EnvelopeParams(t, alpha, s))
