"""Statistics of a run: centred maximum, extremal sets, derivative martingale,
ergodic averages, the localization predicate and extremal-pair split times."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bbmlab.analytic import SQRT2, centering, envelope_value
from bbmlab.engine import Genealogy, PopulationSnapshot, canonical_argmax
from bbmlab.errors import ConfigError, EmptyPopulation

# offsets are compared against grids built from decimal steps; this absorbs the last-bit noise
TIME_TOL = 1e-9


def _check_time(snapshot: PopulationSnapshot) -> float:
    if not snapshot.time > 0:
        raise ConfigError(f"snapshot time must be > 0, got {snapshot.time}")
    return snapshot.time


def max_offset(snapshot: PopulationSnapshot) -> float:
    """M_t - m_t for the snapshot."""
    t = _check_time(snapshot)
    if len(snapshot) == 0:
        raise EmptyPopulation(f"no live particles at t={t}; pruning too aggressive?")
    return float(snapshot.positions.max()) - centering(t)


def argmax_id(snapshot: PopulationSnapshot):
    if len(snapshot) == 0:
        raise EmptyPopulation(f"no live particles at t={snapshot.time}")
    return snapshot.ids[canonical_argmax(snapshot)]


def extremal_mask(snapshot: PopulationSnapshot, x: float) -> np.ndarray:
    t = _check_time(snapshot)
    return snapshot.positions - centering(t) >= x


def extremal_set(snapshot: PopulationSnapshot, x: float) -> list:
    """Ids with centred position >= x, in canonical order."""
    ids = snapshot.ids
    return sorted(ids[i] for i in np.flatnonzero(extremal_mask(snapshot, x)))


def derivative_martingale_from(positions, t: float) -> float:
    x = np.asarray(positions, dtype=np.float64)
    gap = SQRT2 * t - x
    # fsum is exactly rounded, so the result does not depend on the particle order
    return math.fsum((gap * np.exp(-SQRT2 * gap)).tolist())


def derivative_martingale(snapshot: PopulationSnapshot) -> float:
    """Z(t) = sum_u (sqrt2 t - X_u) exp(sqrt2 (X_u - sqrt2 t))."""
    if not snapshot.time >= 0:
        raise ConfigError(f"snapshot time must be >= 0, got {snapshot.time}")
    return derivative_martingale_from(snapshot.positions, snapshot.time)


class ErgodicAccumulator:
    """Running time integrals of 1{M_t - m_t <= x} and 1{M_t - m_t >= x} on an x-grid."""

    def __init__(self, x_grid, t_start: float = 0.0):
        grid = np.asarray(x_grid, dtype=np.float64)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ConfigError("x_grid must be a strictly increasing 1-d sequence")
        self.x_grid = grid
        self.t_start = float(t_start)
        self.mass = np.zeros(len(grid))
        self.mass_ge = np.zeros(len(grid))
        self.elapsed = 0.0

    def accumulate(self, offset: float, dt_weight: float) -> ErgodicAccumulator:
        if not dt_weight > 0:
            raise ConfigError(f"dt_weight must be > 0, got {dt_weight}")
        self.mass[self.x_grid >= offset] += dt_weight
        self.mass_ge[self.x_grid <= offset] += dt_weight
        self.elapsed += dt_weight
        return self

    def _check(self):
        if self.elapsed <= 0:
            raise ConfigError("ergodic accumulator has no samples")

    def result(self) -> np.ndarray:
        """F(x): fraction of accumulated time with offset <= x."""
        self._check()
        return np.minimum(self.mass / self.elapsed, 1.0)

    def upper_result(self) -> np.ndarray:
        """G(x): fraction of accumulated time with offset >= x."""
        self._check()
        return np.minimum(self.mass_ge / self.elapsed, 1.0)

    def merge(self, other: ErgodicAccumulator) -> ErgodicAccumulator:
        if not np.array_equal(self.x_grid, other.x_grid):
            raise ConfigError("cannot merge accumulators on different x-grids")
        out = ErgodicAccumulator(self.x_grid, min(self.t_start, other.t_start))
        out.mass = self.mass + other.mass
        out.mass_ge = self.mass_ge + other.mass_ge
        out.elapsed = self.elapsed + other.elapsed
        return out


@dataclass(frozen=True)
class LocalizationSummary:
    particle: object
    violated: bool
    first_violation_time: float | None
    max_excess: float


def localization_line(times, t: float, alpha: float) -> np.ndarray:
    """(s/t) m_t - min(s, t-s)^alpha evaluated on ``times``."""
    mt = centering(t)
    s = np.clip(np.asarray(times, dtype=np.float64), 0.0, t)
    return np.array([si / t * mt - envelope_value(t, alpha, si) for si in s.tolist()])


def localization_check(times, positions, t: float, r: float, alpha: float,
                       particle=None) -> LocalizationSummary:
    """Evaluate the localization predicate on the grid points inside [r, t - r].

    Only grid times are inspected: an excursion above the line strictly
    between two grid points goes unnoticed.
    """
    if not 0 <= r <= t / 2:
        raise ConfigError(f"need 0 <= r <= t/2, got r={r}, t={t}")
    times = np.asarray(times, dtype=np.float64)
    x = np.asarray(positions, dtype=np.float64)
    if times.shape != x.shape or times.ndim != 1:
        raise ConfigError("times and positions must be equal-length 1-d sequences")
    tol = TIME_TOL * max(t, 1.0)
    if len(times) == 0 or times.min() > r + tol or times.max() < t - r - tol:
        raise ConfigError(f"grid does not cover the window [{r}, {t - r}]")
    win = (times >= r - tol) & (times <= t - r + tol)
    if not win.any():
        raise ConfigError(f"no grid point inside the window [{r}, {t - r}]")
    ts = times[win]
    excess = x[win] - localization_line(ts, t, alpha)
    order = np.argsort(ts, kind="stable")
    ts, excess = ts[order], excess[order]
    m = float(excess.max())
    hit = np.flatnonzero(excess > 0)
    first = float(ts[hit[0]]) if len(hit) else None
    return LocalizationSummary(particle, m > 0, first, m)


def pair_split_scan_nodes(parent, birth, ns_nodes, nt_nodes, s: float) -> float | None:
    """Max split time between node sets observed at ``s`` and at a later time.

    Marks every ancestor of the time-s set, then walks up from each time-t node
    to the first marked node.  Reaching a time-s node means one lineage
    contains the other (split time ``s``); reaching a strict ancestor ``k`` via
    child ``c`` means the paths separate at the branch time ``birth[c]``.
    """
    ns = [int(k) for k in ns_nodes]
    nt = [int(k) for k in nt_nodes]
    if not ns or not nt:
        return None
    members = set(ns)
    marked = set()
    for k in ns:
        while k >= 0 and k not in marked:
            marked.add(k)
            k = int(parent[k])
    best = -math.inf
    for v in nt:
        prev, k = -1, v
        while k not in marked:
            prev, k = k, int(parent[k])
            if k < 0:
                break
        if k < 0:
            continue
        if k in members or prev < 0:
            return float(s)
        best = max(best, float(birth[prev]))
    return None if best == -math.inf else best


def extremal_pair_split_scan(genealogy: Genealogy, snapshot_s: PopulationSnapshot,
                             snapshot_t: PopulationSnapshot, x: float,
                             x_t: float | None = None) -> float | None:
    """max Q(u, v) over u in N_s(x), v in N_t(x_t); ``None`` if either set is empty."""
    s, t = snapshot_s.time, snapshot_t.time
    if not 0 < s < t:
        raise ConfigError(f"need 0 < s < t, got s={s}, t={t}")
    for snap in (snapshot_s, snapshot_t):
        if snap.nodes is None or (snap.genealogy is not None and snap.genealogy is not genealogy):
            raise ConfigError("snapshot does not belong to this genealogy")
        if len(snap.nodes) and snap.nodes.max() >= len(genealogy):
            raise ConfigError("snapshot refers to nodes outside the genealogy")
    x_t = x if x_t is None else x_t
    ns = snapshot_s.nodes[extremal_mask(snapshot_s, x)]
    nt = snapshot_t.nodes[extremal_mask(snapshot_t, x_t)]
    n = genealogy.nodes
    return pair_split_scan_nodes(n["parent"], n["birth_t"], ns, nt, s)
