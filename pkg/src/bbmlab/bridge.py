"""Brownian-bridge closed forms with Monte Carlo oracles, and moment identities.

The oracles simulate bridges on a uniform grid and only check the barrier at
grid points, so for "stay above" events they overestimate the continuous-time
probability.  ``grid_bias_allowance`` quantifies that one-sided bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from bbmlab.analytic import centering, normal_cdf
from bbmlab.errors import ConfigError
from bbmlab.kernels import core
from bbmlab.parallel import map_trials
from bbmlab.rng import RngStreamKey, gaussian_draws

# Broadie-Glasserman-Kou constant: zeta(1/2)/sqrt(2 pi)
BGK_BETA = 0.5825971579390106
BARRIER_KINDS = ("level", "line", "envelope")
DIRECTIONS = ("stay_above", "stay_below")


def bridge_nonneg_prob(t: float, x: float, y: float) -> float:
    """P(bridge from x to y over [0, t] stays >= 0) = 1 - exp(-2xy/t)."""
    if not t > 0:
        raise ConfigError(f"t must be > 0, got {t}")
    if x < 0 or y < 0:
        raise ConfigError(f"endpoints must be >= 0, got x={x}, y={y}")
    return -math.expm1(-2.0 * x * y / t)


def line_at_window_ends(Z1: float, Z2: float, r1: float, r2: float, t: float) -> tuple[float, float]:
    """Height of the line from Z1 (time 0) to Z2 (time t) at r1 and at t - r2."""
    return (1 - r1 / t) * Z1 + (r1 / t) * Z2, (r2 / t) * Z1 + (1 - r2 / t) * Z2


def bridge_two_point_line_bound(Z1: float, Z2: float, r1: float, r2: float, t: float) -> float:
    """Upper bound on P(standard bridge stays below the Z1-Z2 line on [r1, t - r2]).

    Returned raw; it can exceed 1.
    """
    if Z1 < 0 or Z2 < 0:
        raise ConfigError(f"Z1, Z2 must be >= 0, got {Z1}, {Z2}")
    if r1 < 0 or r2 < 0:
        raise ConfigError(f"r1, r2 must be >= 0, got {r1}, {r2}")
    if not t > r1 + r2:
        raise ConfigError(f"need t > r1 + r2, got t={t}, r1={r1}, r2={r2}")
    a, b = line_at_window_ends(Z1, Z2, r1, r2, t)
    return 2.0 / (t - r1 - r2) * (a + math.sqrt(r1)) * (b + math.sqrt(r2))


def bridge_subinterval_nonneg_prob(r: float, gamma: float, y: float) -> float:
    """P(bridge from 0 to y over [0, gamma] stays >= 0 on [r, gamma]).

    Equals 1 - 2 P(B_r <= 0 | B_gamma = y).
    """
    if not 0 < r < gamma:
        raise ConfigError(f"need 0 < r < gamma, got r={r}, gamma={gamma}")
    if not y > 0:
        raise ConfigError(f"y must be > 0, got {y}")
    mu = r / gamma * y
    sigma = math.sqrt(r * (gamma - r) / gamma)
    return 1.0 - 2.0 * normal_cdf(-mu / sigma)


@dataclass(frozen=True)
class BridgeEventSpec:
    """Bridge from ``x`` to ``y`` over [0, t] checked against a barrier on [r1, t - r2].

    Barrier kinds: ``level`` (params: (c,)), ``line`` (params: (Z1, Z2), the
    straight line from Z1 at 0 to Z2 at t) and ``envelope`` (params: (alpha,)
    giving (s/t) m_t - min(s, t-s)^alpha).
    """

    t: float
    x: float
    y: float
    r1: float = 0.0
    r2: float = 0.0
    barrier: str = "level"
    params: tuple = (0.0,)
    direction: str = "stay_above"

    def __post_init__(self):
        if not self.t > 0:
            raise ConfigError(f"t must be > 0, got {self.t}")
        if self.r1 < 0 or self.r2 < 0 or not self.r1 + self.r2 < self.t:
            raise ConfigError(f"window needs 0 <= r1, r2 and r1 + r2 < t (r1={self.r1}, r2={self.r2})")
        if self.barrier not in BARRIER_KINDS:
            raise ConfigError(f"barrier must be one of {BARRIER_KINDS}, got {self.barrier!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        need = {"level": 1, "line": 2, "envelope": 1}[self.barrier]
        if len(self.params) != need:
            raise ConfigError(f"{self.barrier} barrier takes {need} parameter(s)")

    def barrier_values(self, s: np.ndarray) -> np.ndarray:
        t = self.t
        if self.barrier == "level":
            return np.full(len(s), float(self.params[0]))
        if self.barrier == "line":
            z1, z2 = self.params
            return (1 - s / t) * z1 + (s / t) * z2
        (alpha,) = self.params
        return s / t * centering(t) - np.minimum(s, t - s) ** alpha

    def grid(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Barrier values and window flags at the ``steps + 1`` grid times."""
        s = np.arange(steps + 1) * (self.t / steps)
        tol = 1e-9 * self.t
        win = (s >= self.r1 - tol) & (s <= self.t - self.r2 + tol)
        return self.barrier_values(s), win.astype(np.uint8)


def mc_bridge_event_prob(spec: BridgeEventSpec, n_paths: int, grid_steps: int,
                         stream: RngStreamKey) -> tuple[float, float]:
    """(estimate, standard error) of the bridge event, monitored at grid points only."""
    if n_paths < 100:
        raise ConfigError(f"n_paths must be >= 100, got {n_paths}")
    if grid_steps < 10:
        raise ConfigError(f"grid_steps must be >= 10, got {grid_steps}")
    barrier, window = spec.grid(grid_steps)
    hits = core.bridge_stay_count(stream.digest, n_paths, spec.t, spec.x, spec.y,
                                  np.ascontiguousarray(barrier), np.ascontiguousarray(window),
                                  spec.direction == "stay_above")
    p = hits / n_paths
    return p, math.sqrt(p * (1 - p) / n_paths)


def mc_bridge_event_prob_exact(spec: BridgeEventSpec, n_paths: int, grid_steps: int,
                               stream: RngStreamKey, batch: int = 2000) -> tuple[float, float]:
    """(estimate, standard error) of the continuously monitored event, affine barriers only.

    Between consecutive grid points the gap to an affine barrier is itself a
    Brownian bridge, so each path is weighted by the exact probability
    prod (1 - exp(-2 d_i d_{i+1} / dt_i)) that no crossing happens in between.
    The window ends are inserted into the grid, so there is no monitoring bias.
    """
    if spec.barrier not in ("level", "line"):
        raise ConfigError(f"crossing correction needs an affine barrier, got {spec.barrier!r}")
    if n_paths < 100:
        raise ConfigError(f"n_paths must be >= 100, got {n_paths}")
    if grid_steps < 10:
        raise ConfigError(f"grid_steps must be >= 10, got {grid_steps}")
    t = spec.t
    lo, hi = spec.r1, t - spec.r2
    s = np.unique(np.concatenate([np.arange(grid_steps + 1) * (t / grid_steps), [lo, hi]]))
    s[-1] = t
    win = (s >= lo) & (s <= hi)
    ds = np.diff(s)
    sw = s[win]
    dsw = np.diff(sw)
    bar = spec.barrier_values(sw)
    sign = 1.0 if spec.direction == "stay_above" else -1.0
    m = len(ds)
    weights = np.empty(n_paths)
    for b0 in range(0, n_paths, batch):
        k = min(batch, n_paths - b0)
        z = gaussian_draws(stream, k * m, start=b0 * m).reshape(k, m)
        w = np.zeros((k, m + 1))
        np.cumsum(z * np.sqrt(ds), axis=1, out=w[:, 1:])
        path = spec.x + w - np.outer(w[:, -1] + spec.x - spec.y, s / t)
        d = sign * (path[:, win] - bar)
        with np.errstate(divide="ignore"):
            logq = np.log(-np.expm1(-2.0 * np.maximum(d[:, :-1], 0) * np.maximum(d[:, 1:], 0) / dsw))
        wt = np.exp(logq.sum(axis=1))
        wt[(d < 0).any(axis=1)] = 0.0
        weights[b0:b0 + k] = wt
    p = float(weights.mean())
    return p, float(weights.std(ddof=1) / math.sqrt(n_paths))


def bgk_shift(t: float, steps: int) -> float:
    """Barrier shift beta * sqrt(dt) that maps discrete to continuous monitoring to first order."""
    return BGK_BETA * math.sqrt(t / steps)


def subinterval_prob_shifted(r: float, gamma: float, y: float, b: float) -> float:
    """P(bridge from 0 to y stays >= -b on [r, gamma]), by quadrature over B_r."""
    mu = r / gamma * y
    sigma = math.sqrt(r * (gamma - r) / gamma)
    g = gamma - r

    def f(z):
        return math.exp(-0.5 * ((z - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi)) * \
            -math.expm1(-2.0 * (z + b) * (y + b) / g)

    val, _ = integrate.quad(f, -b, mu + 40 * sigma, limit=200, epsabs=1e-14, epsrel=1e-13)
    return val


def grid_bias_allowance(kind: str, steps: int, **kw) -> float:
    """One-sided allowance for the overestimate caused by discrete monitoring.

    Uses the shifted-barrier approximation: discrete monitoring of a barrier at
    0 behaves like continuous monitoring of a barrier at -beta sqrt(dt).
    """
    if kind == "nonneg":
        t, x, y = kw["t"], kw["x"], kw["y"]
        b = bgk_shift(t, steps)
        return bridge_nonneg_prob(t, x + b, y + b) - bridge_nonneg_prob(t, x, y)
    if kind == "subinterval":
        r, gamma, y = kw["r"], kw["gamma"], kw["y"]
        b = bgk_shift(gamma, steps)
        return subinterval_prob_shifted(r, gamma, y, b) - bridge_subinterval_nonneg_prob(r, gamma, y)
    raise ConfigError(f"unknown allowance kind {kind!r}")


# moment identities

@dataclass(frozen=True)
class FunctionalSpec:
    """Terminal-value functional: ``const`` (c), ``ge`` (c * 1{x >= a}) or ``le`` (c * 1{x <= a})."""

    kind: str = "const"
    a: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("const", "ge", "le"):
            raise ConfigError(f"functional kind must be const, ge or le, got {self.kind!r}")

    def values(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "const":
            return np.full(len(x), self.c)
        if self.kind == "ge":
            return self.c * (x >= self.a)
        return self.c * (x <= self.a)

    def expect(self, mean: float, var: float) -> float:
        """E f(N(mean, var))."""
        if self.kind == "const":
            return self.c
        if var == 0:
            return float(self.values(np.array([mean]))[0])
        z = (self.a - mean) / math.sqrt(var)
        return self.c * (normal_cdf(-z) if self.kind == "ge" else normal_cdf(z))


@dataclass(frozen=True)
class MomentCheck:
    lhs: float
    lhs_se: float
    rhs: float
    z: float


def _z(lhs: float, se: float, rhs: float) -> float:
    if se == 0:
        return 0.0 if lhs == rhs else math.copysign(math.inf, lhs - rhs)
    return (lhs - rhs) / se


def _bbm_sums(stream: RngStreamKey, times: list[float], specs: list[FunctionalSpec],
              n_trials: int, threads: int) -> np.ndarray:
    """Per trial, sum_u f_k(X_u(times[k])) for each k."""

    def one(i: int, scratch: dict):
        d = np.array([stream.child(i).digest], dtype=np.uint64)
        eng = scratch.get("eng")
        if eng is None:
            eng = scratch["eng"] = core.Engine(0.0, np.zeros(1), d, record=False)
        else:
            eng.reset(0.0, np.zeros(1), d)
        out = []
        for tk, f in zip(times, specs):
            eng.advance(tk)
            out.append(math.fsum(f.values(eng.positions()).tolist()))
        return out

    return np.array(map_trials(one, n_trials, threads), dtype=np.float64).reshape(n_trials, len(times))


def many_to_one_check(f: FunctionalSpec, t: float, n_trials: int, stream: RngStreamKey,
                      threads: int = 1, allow_large_t: bool = False) -> MomentCheck:
    """E sum_u f(X_u(t)) over BBM against e^t E f(B_t)."""
    if not t > 0:
        raise ConfigError(f"t must be > 0, got {t}")
    if t > 4 and not allow_large_t:
        raise ConfigError(f"t={t} exceeds the population guard t <= 4")
    sums = _bbm_sums(stream, [t], [f], n_trials, threads)[:, 0]
    lhs = float(sums.mean())
    se = float(sums.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else math.inf
    rhs = math.exp(t) * f.expect(0.0, t)
    return MomentCheck(lhs, se, rhs, _z(lhs, se, rhs))


def pair_expectation(f: FunctionalSpec, g: FunctionalSpec, t: float, s: float, gamma: float) -> float:
    """E f(B1_t) g(B2_s) for two Brownian paths that coincide up to ``gamma`` and then move independently."""
    if f.kind == "const" or g.kind == "const":
        return f.expect(0.0, t) * g.expect(0.0, s) if gamma == 0 else _pair_quad(f, g, t, s, gamma)
    return _pair_quad(f, g, t, s, gamma)


def _pair_quad(f, g, t, s, gamma):
    if gamma == 0:
        return f.expect(0.0, t) * g.expect(0.0, s)
    sd = math.sqrt(gamma)

    def integrand(w):
        dens = math.exp(-0.5 * w * w / gamma) / (sd * math.sqrt(2 * math.pi))
        return dens * f.expect(w, t - gamma) * g.expect(w, s - gamma)

    pts = [p for p in (f.a, g.a) if -12 * sd < p < 12 * sd]
    val, _ = integrate.quad(integrand, -12 * sd, 12 * sd, points=pts or None, limit=200,
                            epsabs=1e-13, epsrel=1e-11)
    return val


def many_to_two_rhs(f: FunctionalSpec, g: FunctionalSpec, s: float, t: float,
                    quadrature_nodes: int = 256) -> float:
    """e^t E[f g] + int_0^s 2 e^{t+s-gamma} E[f(B1) g(B2) | split at gamma] d gamma (midpoint rule)."""
    h = s / quadrature_nodes
    total = math.exp(t) * pair_expectation(f, g, t, s, s)
    terms = []
    for k in range(quadrature_nodes):
        gam = (k + 0.5) * h
        terms.append(2.0 * math.exp(t + s - gam) * pair_expectation(f, g, t, s, gam))
    return total + h * math.fsum(terms)


def many_to_two_check(f: FunctionalSpec, g: FunctionalSpec, s: float, t: float,
                      quadrature_nodes: int, n_trials: int, stream: RngStreamKey,
                      threads: int = 1) -> MomentCheck:
    """E[sum_u f(X_u(t)) * sum_v g(X_v(s))] over BBM against the two-path formula."""
    if not 0 <= s <= t <= 3:
        raise ConfigError(f"need 0 <= s <= t <= 3, got s={s}, t={t}")
    if quadrature_nodes < 64:
        raise ConfigError(f"quadrature_nodes must be >= 64, got {quadrature_nodes}")
    if s == 0:
        sums = _bbm_sums(stream, [t], [f], n_trials, threads)
        prod = sums[:, 0] * float(g.values(np.zeros(1))[0])
    else:
        sums = _bbm_sums(stream, [s, t], [g, f], n_trials, threads)
        prod = sums[:, 0] * sums[:, 1]
    lhs = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else math.inf
    rhs = many_to_two_rhs(f, g, s, t, quadrature_nodes)
    return MomentCheck(lhs, se, rhs, _z(lhs, se, rhs))
