"""Binary branching Brownian motion with optional genealogy and pruning.

Particles carry exact exponential lifetimes, so branch times and branch
positions are never rounded to a grid.  ``mode="event"`` only synchronises the
population at requested snapshot times; ``mode="grid"`` also stops at every
multiple of ``dt`` so hooks can evaluate path predicates (excursions between
grid points are not seen).

Particle ids are tree coordinates: the root is ``()`` and the children of ``u``
are ``u + (0,)`` and ``u + (1,)``.  The same tuple is the particle's stream
derivation path below ``RunConfig.root_stream``, so a particle's randomness does
not depend on which other particles exist.  Runs started from several roots
(continuations) give root ``i`` the id ``(i,)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from bbmlab._layout import BRANCHED, END_KIND_NAMES, HORIZON, KILLED, OPEN, PURPOSE_BRIDGE
from bbmlab.errors import ConfigError
from bbmlab.kernels import core
from bbmlab.rng import RngStreamKey, bridge_moments

SQRT2 = math.sqrt(2.0)
PRUNE_MODES = ("none", "line_barrier", "gap_to_max", "cap_count")
RUN_MODES = ("event", "grid")
DEFAULT_HARD_LIMIT = 2_000_000

ParticleId = tuple


def format_id(u: ParticleId) -> str:
    """Compact text form used in CSV output (``"root"`` for the root)."""
    if not u:
        return "root"
    return ".".join(str(b) for b in u) if any(b > 1 for b in u) else "".join(map(str, u))


@dataclass(frozen=True)
class PruneConfig:
    mode: str = "none"
    A: float | None = None
    L: float | None = None
    N_max: int | None = None

    def __post_init__(self):
        if self.mode not in PRUNE_MODES:
            raise ConfigError(f"prune mode must be one of {PRUNE_MODES}, got {self.mode!r}")
        if self.mode == "line_barrier" and not (self.A is not None and self.A > 0):
            raise ConfigError("line_barrier pruning needs A > 0")
        if self.mode == "gap_to_max" and not (self.L is not None and self.L > 0):
            raise ConfigError("gap_to_max pruning needs L > 0")
        if self.mode == "cap_count" and not (self.N_max is not None and self.N_max >= 1):
            raise ConfigError("cap_count pruning needs N_max >= 1")


@dataclass(frozen=True)
class RunConfig:
    T: float
    mode: str = "event"
    dt: float = 0.01
    snapshot_times: tuple[float, ...] = ()
    prune: PruneConfig = field(default_factory=PruneConfig)
    root_stream: RngStreamKey = field(default_factory=lambda: RngStreamKey(0))
    hard_particle_limit: int = DEFAULT_HARD_LIMIT
    record_genealogy: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"T must be positive, got {self.T}")
        if self.mode not in RUN_MODES:
            raise ConfigError(f"mode must be one of {RUN_MODES}, got {self.mode!r}")
        if self.mode == "grid" and not 0 < self.dt <= 0.1:
            raise ConfigError(f"grid mode needs 0 < dt <= 0.1, got {self.dt}")
        snaps = tuple(float(s) for s in self.snapshot_times)
        if any(b < a for a, b in zip(snaps, snaps[1:])):
            raise ConfigError("snapshot_times must be sorted")
        if any(not 0 <= s <= self.T for s in snaps):
            raise ConfigError(f"snapshot_times must lie in [0, T={self.T}]")
        object.__setattr__(self, "snapshot_times", snaps)
        if self.hard_particle_limit < 1:
            raise ConfigError("hard_particle_limit must be >= 1")

    def sync_times(self) -> np.ndarray:
        """Times at which the population is synchronised, ending at ``T``."""
        times = [s for s in self.snapshot_times if s > 0]
        if self.mode == "grid":
            n = max(1, int(round(self.T / self.dt)))
            times.extend(k * self.dt for k in range(1, n) if k * self.dt < self.T)
        times.append(self.T)
        return np.unique(np.asarray(times, dtype=np.float64))


class Genealogy:
    """Immutable tree of particle records built from the engine's node table."""

    def __init__(self, nodes: np.ndarray, multi_root: bool = False,
                 root_stream: RngStreamKey | None = None):
        self.nodes = nodes
        self.multi_root = multi_root
        self.root_stream = root_stream
        self._ids: list | None = None
        self._index: dict | None = None
        self._bridge: dict = {}

    def __len__(self) -> int:
        return len(self.nodes)

    # ids <-> node indices
    def id_of(self, k: int) -> ParticleId:
        if self._ids is not None:
            return self._ids[k]
        parent, bit = self.nodes["parent"], self.nodes["bit"]
        out = []
        k = int(k)
        while parent[k] >= 0:
            out.append(int(bit[k]))
            k = int(parent[k])
        if self.multi_root:
            out.append(int(bit[k]))
        return tuple(reversed(out))

    def ids(self) -> list:
        if self._ids is None:
            parent, bit = self.nodes["parent"].tolist(), self.nodes["bit"].tolist()
            ids: list = [None] * len(parent)
            for k, p in enumerate(parent):  # parents always precede children
                ids[k] = ids[p] + (bit[k],) if p >= 0 else ((bit[k],) if self.multi_root else ())
            self._ids = ids
        return self._ids

    def index(self, u: ParticleId) -> int:
        if self._index is None:
            self._index = {u: k for k, u in enumerate(self.ids())}
        try:
            return self._index[tuple(u)]
        except KeyError:
            raise ConfigError(f"unknown particle id {u!r}") from None

    def node(self, u: ParticleId) -> GenealogyNode:
        return self.node_at(self.index(u))

    def node_at(self, k: int) -> GenealogyNode:
        r = self.nodes[k]
        p = int(r["parent"])
        return GenealogyNode(
            id=self.id_of(k),
            parent_id=None if p < 0 else self.id_of(p),
            birth_time=float(r["birth_t"]),
            birth_position=float(r["birth_x"]),
            end_time=float(r["end_t"]),
            end_position=float(r["end_x"]),
            end_kind=END_KIND_NAMES[int(r["kind"])],
        )

    def __iter__(self):
        return (self.node_at(k) for k in range(len(self.nodes)))

    def children(self, u: ParticleId) -> list:
        k = self.index(u)
        if self.nodes["kind"][k] != BRANCHED:
            return []
        return [tuple(u) + (0,), tuple(u) + (1,)]

    def ancestor_index(self, k: int, s: float) -> int:
        """Index of the ancestor of node ``k`` (possibly itself) alive on an edge spanning ``s``."""
        parent, birth = self.nodes["parent"], self.nodes["birth_t"]
        while birth[k] > s and parent[k] >= 0:
            k = int(parent[k])
        return int(k)

    def is_ancestor(self, a: int, b: int) -> bool:
        """Whether node ``a`` is a (non-strict) ancestor of node ``b``."""
        parent = self.nodes["parent"]
        while b >= 0:
            if b == a:
                return True
            b = int(parent[b])
        return False

    def stream_of(self, u: ParticleId) -> RngStreamKey:
        if self.root_stream is None:
            raise ConfigError("genealogy has no root stream attached")
        return self.root_stream.descend(*u)

    def check_invariants(self) -> None:
        """Raise ``AssertionError`` if any structural invariant fails."""
        n = self.nodes
        parent = n["parent"]
        kids = np.flatnonzero(parent >= 0)
        counts = np.bincount(parent[kids], minlength=len(n))
        branched = n["kind"] == BRANCHED
        assert np.all(counts[branched] == 2), "branched node without two children"
        assert np.all(counts[~branched] == 0), "children under a non-branched node"
        p = parent[kids]
        assert np.array_equal(n["birth_t"][kids], n["end_t"][p]), "child birth != parent end time"
        assert np.array_equal(n["birth_x"][kids], n["end_x"][p]), "child birth != parent end position"
        closed = n["kind"] != OPEN
        assert np.all(n["end_t"][closed] >= n["birth_t"][closed]), "node ends before birth"


@dataclass(frozen=True)
class GenealogyNode:
    id: ParticleId
    parent_id: ParticleId | None
    birth_time: float
    birth_position: float
    end_time: float
    end_position: float
    end_kind: str


class PopulationSnapshot:
    """Positions of the live particles at one time.

    ``nodes`` holds each particle's index in the genealogy node table; the tuple
    ids are produced lazily because building them costs more than the run.
    """

    def __init__(self, time: float, positions: np.ndarray, nodes: np.ndarray | None = None,
                 genealogy: Genealogy | None = None, ids: Sequence | None = None):
        self.time = float(time)
        self.positions = np.asarray(positions, dtype=np.float64)
        self.nodes = None if nodes is None else np.asarray(nodes, dtype=np.int64)
        self.genealogy = genealogy
        self._ids = None if ids is None else [tuple(u) for u in ids]

    @classmethod
    def from_entries(cls, time: float, entries: Iterable[tuple[ParticleId, float]]) -> PopulationSnapshot:
        entries = list(entries)
        return cls(time, np.array([x for _, x in entries], dtype=np.float64),
                   ids=[u for u, _ in entries])

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def ids(self) -> list:
        if self._ids is None:
            if self.genealogy is None or self.nodes is None:
                raise ConfigError("snapshot has no genealogy to resolve ids")
            self._ids = [self.genealogy.id_of(int(k)) for k in self.nodes]
        return self._ids

    @property
    def entries(self) -> list:
        return list(zip(self.ids, self.positions.tolist()))

    def canonical_order(self) -> np.ndarray:
        """Permutation sorting the entries by id."""
        ids = self.ids
        return np.array(sorted(range(len(ids)), key=ids.__getitem__), dtype=np.int64)

    def subset(self, keep: np.ndarray) -> PopulationSnapshot:
        keep = np.asarray(keep)
        return PopulationSnapshot(
            self.time,
            self.positions[keep],
            None if self.nodes is None else self.nodes[keep],
            self.genealogy,
            None if self._ids is None else [self._ids[i] for i in np.flatnonzero(keep)]
            if keep.dtype == bool else [self._ids[i] for i in keep],
        )


def canonical_argmax(snapshot: PopulationSnapshot) -> int:
    """Index of the maximum position, ties resolved to the smallest id."""
    x = snapshot.positions
    if len(x) == 0:
        raise ConfigError("empty snapshot has no maximum")
    top = np.flatnonzero(x == x.max())
    if len(top) == 1:
        return int(top[0])
    ids = snapshot.ids
    return int(min(top, key=lambda i: ids[i]))


def prune_mask(snapshot: PopulationSnapshot, config: PruneConfig) -> np.ndarray:
    """Boolean mask of particles the prune rule removes (never the maximum)."""
    x = snapshot.positions
    mask = np.zeros(len(x), dtype=bool)
    if len(x) == 0 or config.mode == "none":
        return mask
    if config.mode == "line_barrier":
        mask = x < SQRT2 * snapshot.time - config.A
    elif config.mode == "gap_to_max":
        mask = x < x.max() - config.L
    elif len(x) > config.N_max:
        cut = np.sort(x)[::-1][config.N_max - 1]
        mask = x < cut
        tied = np.flatnonzero(x == cut)
        room = config.N_max - int(np.count_nonzero(x > cut))
        if len(tied) > room:
            ids = snapshot.ids
            tied = sorted(tied, key=lambda i: ids[i])
            mask[tied[room:]] = True
    mask[canonical_argmax(snapshot)] = False
    return mask


def apply_pruning(snapshot: PopulationSnapshot, config: PruneConfig):
    """Split a snapshot into (survivors, killed ids).

    Inside ``run`` the same mask is applied to the live engine, which closes the
    killed genealogy nodes with ``end_kind = "killed_by_pruning"``.
    """
    mask = prune_mask(snapshot, config)
    if not mask.any():
        return snapshot, []
    killed = [snapshot.ids[i] for i in np.flatnonzero(mask)]
    return snapshot.subset(~mask), sorted(killed)


@dataclass
class RunStats:
    branch_events: int
    killed: int
    n_alive: int
    n_nodes: int
    sync_points: int


@dataclass
class RunResult:
    genealogy: Genealogy | None
    snapshots: dict
    stats: RunStats


Hook = Callable[[PopulationSnapshot], None]


class Simulation:
    """Stateful run that can stop at any sync time, be checkpointed and resumed."""

    def __init__(self, config: RunConfig, hooks: Sequence[Hook] = (), _engine=None,
                 _next: int = 0, _snapshots: dict | None = None):
        self.config = config
        self.hooks = list(hooks)
        self.sync = config.sync_times()
        self._wanted = set(config.snapshot_times)
        if _engine is None:
            _engine = core.Engine(0.0, np.zeros(1), np.array([config.root_stream.digest], dtype=np.uint64),
                                  record=config.record_genealogy,
                                  hard_limit=config.hard_particle_limit)
        self.engine = _engine
        self._next = _next
        self.snapshots: dict = {} if _snapshots is None else _snapshots
        self._genealogy: Genealogy | None = None
        if _next == 0 and 0.0 in self._wanted:
            self.snapshots[0.0] = self._snapshot()

    @property
    def time(self) -> float:
        return self.engine.t

    @property
    def done(self) -> bool:
        return self._next >= len(self.sync)

    def _snapshot(self) -> PopulationSnapshot:
        eng = self.engine
        nodes = eng.node_ids() if eng.record else None
        return PopulationSnapshot(eng.t, eng.positions(), nodes)

    def step(self) -> None:
        tau = float(self.sync[self._next])
        eng = self.engine
        eng.advance(tau)
        prune = self.config.prune
        if prune.mode == "gap_to_max":
            eng.prune_gap(prune.L)
        elif prune.mode == "line_barrier":
            eng.prune_below(SQRT2 * tau - prune.A)
        elif prune.mode == "cap_count" and eng.n_alive > prune.N_max:
            snap = self._snapshot()
            if eng.record:
                snap.genealogy = Genealogy(eng.node_table(), root_stream=self.config.root_stream)
            eng.kill(prune_mask(snap, prune))
        self._next += 1
        keep = tau in self._wanted
        if keep or self.hooks:
            snap = self._snapshot()
            if keep:
                self.snapshots[tau] = snap
            for h in self.hooks:
                h(snap)

    def run_until(self, t: float | None = None) -> Simulation:
        while not self.done and (t is None or self.sync[self._next] <= t):
            self.step()
        return self

    def finish(self) -> RunResult:
        self.run_until()
        eng = self.engine
        eng.close_horizon()
        gen = None
        if eng.record:
            gen = Genealogy(eng.node_table(), root_stream=self.config.root_stream)
            for snap in self.snapshots.values():
                snap.genealogy = gen
        stats = RunStats(eng.branch_events, eng.killed, eng.n_alive, eng.n_nodes, len(self.sync))
        return RunResult(gen, dict(sorted(self.snapshots.items())), stats)


def run(config: RunConfig, hooks: Sequence[Hook] = ()) -> RunResult:
    """Simulate to ``config.T``; raises ``ParticleLimitExceeded`` past the hard limit."""
    return Simulation(config, hooks).finish()


# positions inside edges

def position_at(genealogy: Genealogy, u: ParticleId, s: float, stream_policy: int = 0) -> float:
    """Position at time ``s`` of particle ``u`` or of its ancestor alive at ``s``.

    Inside an edge the value is a Brownian-bridge sample between the edge's
    endpoints and any earlier samples on that edge; it is memoized per
    ``stream_policy`` epoch so repeated queries agree.  A new epoch gives fresh,
    independent interior samples with the same endpoints.
    """
    k = genealogy.index(u)
    n = genealogy.nodes
    if not s >= 0:
        raise ConfigError(f"time s must be >= 0, got {s}")
    if n["kind"][k] == OPEN:
        raise ConfigError("position_at needs a closed genealogy")
    if s > n["end_t"][k]:
        raise ConfigError(f"s={s} is beyond the end time {n['end_t'][k]} of {u!r}")
    k = genealogy.ancestor_index(k, s)
    bt, et = float(n["birth_t"][k]), float(n["end_t"][k])
    if s == bt:
        return float(n["birth_x"][k])
    if s == et:
        return float(n["end_x"][k])
    key = (int(stream_policy), k)
    pts = genealogy._bridge.get(key)
    if pts is None:
        pts = genealogy._bridge[key] = ([bt, et], [float(n["birth_x"][k]), float(n["end_x"][k])], [0])
    times, xs, counter = pts
    j = bisect.bisect_left(times, s)
    if times[j] == s:
        return xs[j]
    mean, var = bridge_moments(xs[j - 1], xs[j], times[j] - times[j - 1], s - times[j - 1])
    draw = counter[0] + (int(stream_policy) << 40)
    counter[0] += 1
    z = float(core.normals(int(n["digest"][k]), PURPOSE_BRIDGE, draw, 1)[0])
    x = mean + math.sqrt(var) * z
    times.insert(j, s)
    xs.insert(j, x)
    return x


def split_time(genealogy: Genealogy, u: ParticleId, v: ParticleId,
               s_u: float | None = None, s_v: float | None = None) -> float:
    """Last time the ancestral paths of ``u`` and ``v`` coincide.

    ``s_u``/``s_v`` are the times at which the particles are observed (default:
    their end times).  If one lineage contains the other the answer is the
    smaller observation time.
    """
    n = genealogy.nodes
    a, b = genealogy.index(u), genealogy.index(v)
    ta = float(n["end_t"][a]) if s_u is None else float(s_u)
    tb = float(n["end_t"][b]) if s_v is None else float(s_v)
    return _split_nodes(n["parent"], n["birth_t"], a, b, ta, tb)


def _split_nodes(parent, birth, a: int, b: int, ta: float, tb: float) -> float:
    # collect a's lineage with the child through which it was reached
    via = {}
    prev, k = -1, a
    while k >= 0:
        via[k] = prev
        prev, k = k, int(parent[k])
    prev, k = -1, b
    while k not in via:
        prev, k = k, int(parent[k])
        if k < 0:
            raise ConfigError("particles do not share a root")
    ca, cb = via[k], prev
    # end of the common stretch: the branch time below the LCA, or the observation time
    end_a = ta if ca < 0 else float(birth[ca])
    end_b = tb if cb < 0 else float(birth[cb])
    return min(end_a, end_b)
