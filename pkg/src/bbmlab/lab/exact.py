"""Exact checks: the cross-index BKR-type inequality and the subsequence bound."""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from bbmlab.errors import ConfigError
from bbmlab.rng import RngStreamKey, uniform_draws

SLACK = Fraction(1, 10**12)
ENUM_GUARD = 10**7


@dataclass(frozen=True)
class BkrInstance:
    """Independent indices u = 0..n-1, each with a finite outcome space and two events."""

    probs: tuple  # probs[u][k]: probability of outcome k of index u (Fractions)
    A: tuple  # A[u]: frozenset of outcomes
    E: tuple

    def __post_init__(self):
        if not (len(self.probs) == len(self.A) == len(self.E)):
            raise ConfigError("probs, A and E must have one entry per index")
        for u, p in enumerate(self.probs):
            if sum(p) != 1:
                raise ConfigError(f"probabilities of index {u} sum to {sum(p)}, not 1")
            if any(q < 0 for q in p):
                raise ConfigError(f"negative probability at index {u}")
            for ev in (self.A[u], self.E[u]):
                if not set(ev) <= set(range(len(p))):
                    raise ConfigError(f"event of index {u} is not a subset of its outcome space")

    @property
    def n(self) -> int:
        return len(self.probs)

    @property
    def sizes(self) -> tuple:
        return tuple(len(p) for p in self.probs)


def random_bkr_instance(stream: RngStreamKey, max_n: int = 3, max_size: int = 4) -> BkrInstance:
    u = iter(uniform_draws(stream, 256).tolist())

    def pick(k: int) -> int:
        return min(int(next(u) * k), k - 1)

    n = 1 + pick(max_n)
    probs, A, E = [], [], []
    for _ in range(n):
        size = 1 + pick(max_size)
        w = [1 + pick(9) for _ in range(size)]
        tot = sum(w)
        probs.append(tuple(Fraction(x, tot) for x in w))
        A.append(frozenset(k for k in range(size) if next(u) < 0.5))
        E.append(frozenset(k for k in range(size) if next(u) < 0.5))
    return BkrInstance(tuple(probs), tuple(A), tuple(E))


@dataclass(frozen=True)
class BkrResult:
    lhs: Fraction
    rhs: Fraction
    violated: bool


def bkr_brute_force(inst: BkrInstance) -> BkrResult:
    """Enumerate the product space exactly.

    lhs = P(A_u and E_v for some u != v), rhs = P(union A_u) P(union E_u).
    """
    total = math.prod(inst.sizes)
    if total > ENUM_GUARD:
        raise ConfigError(f"product space has {total} outcomes, above the guard {ENUM_GUARD}")
    lhs = Fraction(0)
    pa = Fraction(0)
    pe = Fraction(0)
    for omega in itertools.product(*(range(s) for s in inst.sizes)):
        p = math.prod((inst.probs[u][k] for u, k in enumerate(omega)), start=Fraction(1))
        a = [k in inst.A[u] for u, k in enumerate(omega)]
        e = [k in inst.E[u] for u, k in enumerate(omega)]
        if any(a):
            pa += p
        if any(e):
            pe += p
        if any(a[i] and e[j] for i in range(inst.n) for j in range(inst.n) if i != j):
            lhs += p
    rhs = pa * pe
    return BkrResult(lhs, rhs, lhs > rhs + SLACK)


@dataclass(frozen=True)
class SubsequenceResult:
    schedule: tuple
    rho_at_schedule: tuple  # rho_{S_n}
    sup_abs_rho: tuple  # sup of |rho_T| over [S_n, S_{n+1}]
    bound: tuple  # |rho_{S_n}| + 1 - S_n / S_{n+1}
    holds: bool


def subsequence_average_check(breaks: Sequence[float], values: Sequence[float],
                              schedule: Sequence[float]) -> SubsequenceResult:
    """Check sup_{T in [S_n, S_{n+1}]} |rho_T| <= |rho_{S_n}| + 1 - S_n/S_{n+1} exactly.

    The signal is piecewise constant: ``values[k]`` on ``[breaks[k], breaks[k+1])``
    with ``breaks[0] = 0``.  All arithmetic uses exact rationals built from the
    float inputs.  On each piece rho_T = a/T + b is monotone, so the supremum
    over an interval is attained at a piece boundary or an interval end.
    """
    br = [Fraction(b) for b in breaks]
    vs = [Fraction(v) for v in values]
    sc = [Fraction(s) for s in schedule]
    if len(br) != len(vs) + 1 or br[0] != 0 or any(b2 <= b1 for b1, b2 in zip(br, br[1:])):
        raise ConfigError("breaks must start at 0, increase, and have one more entry than values")
    if any(abs(v) > 1 for v in vs):
        raise ConfigError("signal values must satisfy |x| <= 1")
    if len(sc) < 2 or sc[0] <= 0 or any(b <= a for a, b in zip(sc, sc[1:])):
        raise ConfigError("schedule must be positive and strictly increasing")
    if sc[-1] > br[-1]:
        raise ConfigError("schedule runs past the end of the signal")
    cum = [Fraction(0)]
    for k, v in enumerate(vs):
        cum.append(cum[-1] + v * (br[k + 1] - br[k]))

    def integral(T: Fraction) -> Fraction:
        k = min(bisect.bisect_right(br, T) - 1, len(vs) - 1)
        return cum[k] + vs[k] * (T - br[k])

    rho_s, sups, bounds = [], [], []
    ok = True
    for a, b in zip(sc, sc[1:]):
        pts = [a, b] + [x for x in br if a < x < b]
        sup = max(abs(integral(T) / T) for T in pts)
        r = integral(a) / a
        bound = abs(r) + 1 - a / b
        ok &= sup <= bound
        rho_s.append(r)
        sups.append(sup)
        bounds.append(bound)
    return SubsequenceResult(tuple(sc), tuple(rho_s), tuple(sups), tuple(bounds), bool(ok))
