"""Counter-based splittable random streams.

A stream is identified by ``(trial_seed, path)``.  Its 64-bit digest is computed
by hashing the seed with Philox4x32-10 and then folding in each path index; no
generator state is ever shared, so two streams never interfere no matter how
many threads draw from them or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from bbmlab._layout import PURPOSE_SAMPLE
from bbmlab.errors import ConfigError
from bbmlab.kernels import core

U64 = 1 << 64


def _u64(name: str, v) -> int:
    v = int(v)
    if not 0 <= v < U64:
        raise ConfigError(f"{name} must be an unsigned 64-bit integer, got {v}")
    return v


@dataclass(frozen=True)
class RngStreamKey:
    trial_seed: int
    path: tuple[int, ...] = ()
    _digest: int | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trial_seed", _u64("trial_seed", self.trial_seed))
        object.__setattr__(self, "path", tuple(_u64("path index", i) for i in self.path))

    @property
    def digest(self) -> int:
        d = self._digest
        if d is None:
            d = core.seed_digest(self.trial_seed)
            for i in self.path:
                d = core.derive(d, i)
            object.__setattr__(self, "_digest", d)
        return d

    def child(self, index: int) -> RngStreamKey:
        return derive_stream(self, index)

    def descend(self, *indices: int) -> RngStreamKey:
        key = self
        for i in indices:
            key = derive_stream(key, i)
        return key


def derive_stream(parent: RngStreamKey, child_index: int) -> RngStreamKey:
    """Key for child ``child_index`` of ``parent``."""
    child_index = _u64("child_index", child_index)
    return RngStreamKey(
        parent.trial_seed,
        parent.path + (child_index,),
        _digest=core.derive(parent.digest, child_index),
    )


def uniform_draws(stream: RngStreamKey, n: int, start: int = 0) -> np.ndarray:
    """``n`` uniforms strictly inside (0, 1)."""
    return core.uniforms(stream.digest, PURPOSE_SAMPLE, start, n)


def gaussian_draws(stream: RngStreamKey, n: int, mean: float = 0.0, variance: float = 1.0,
                   start: int = 0) -> np.ndarray:
    if not variance >= 0:
        raise ConfigError(f"variance must be >= 0, got {variance}")
    z = core.normals(stream.digest, PURPOSE_SAMPLE, start, n)
    if variance == 0:
        return np.full(n, float(mean))
    return mean + math.sqrt(variance) * z


def sample_gaussian(stream: RngStreamKey, mean: float, variance: float) -> float:
    """First Gaussian draw of ``stream``; ``variance == 0`` returns ``mean`` exactly."""
    return float(gaussian_draws(stream, 1, mean, variance)[0])


def bridge_moments(a: float, y: float, gamma: float, r: float) -> tuple[float, float]:
    """Mean and variance at time ``r`` of a bridge from ``a`` to ``y`` over ``[0, gamma]``."""
    if not 0 < r < gamma:
        raise ConfigError(f"bridge time r={r} must lie strictly inside (0, gamma={gamma})")
    return a + (r / gamma) * (y - a), r * (gamma - r) / gamma


def sample_bridge_interior(stream: RngStreamKey, a: float, y: float, gamma: float,
                           r: float) -> float:
    """Draw at time ``r`` of a bridge from ``a`` to ``y``; the endpoints are returned exactly."""
    if not 0 <= r <= gamma:
        raise ConfigError(f"bridge time r={r} must lie in [0, gamma={gamma}]")
    if r == 0:
        return float(a)
    if r == gamma:
        return float(y)
    mean, var = bridge_moments(a, y, gamma, r)
    return sample_gaussian(stream, mean, var)
