"""Pure-Python twin of ``bbmlab._core``.

Same functions, same floating-point operation order, same results bit for bit;
only much slower.  Selected automatically when the extension is not built, or
forced with ``BBMLAB_PURE_PYTHON=1``.
"""

from __future__ import annotations

import math

import numpy as np

from bbmlab._layout import (
    BRANCHED,
    HORIZON,
    KILLED,
    MAX_LABELS,
    MAX_TRACKERS,
    NODE_DTYPE,
    OPEN,
    PARTICLE_DTYPE,
    PURPOSE_PATH,
    PURPOSE_STEP,
    TAG_DERIVE,
    TAG_ROOT,
)
from bbmlab.errors import ParticleLimitExceeded

COMPILED = False

_M32 = 0xFFFFFFFF
_M64 = 0xFFFFFFFFFFFFFFFF
_INV52 = 1.0 / 4503599627370496.0


def philox4x32(c0, c1, c2, c3, k0, k1):
    """One Philox4x32-10 block for counter (c0..c3) and key (k0, k1)."""
    for r in range(10):
        if r:
            k0 = (k0 + 0x9E3779B9) & _M32
            k1 = (k1 + 0xBB67AE85) & _M32
        p0 = 0xD2511F53 * c0
        p1 = 0xCD9E8D57 * c2
        c0, c1, c2, c3 = (p1 >> 32) ^ c1 ^ k0, p1 & _M32, (p0 >> 32) ^ c3 ^ k1, p0 & _M32
    return (c0, c1, c2, c3)


def _block(digest, purpose, index):
    return philox4x32(index & _M32, (index >> 32) & _M32, purpose, 0, digest & _M32, digest >> 32)


def seed_digest(seed):
    seed &= _M64
    w = philox4x32(0, 0, TAG_ROOT, 0, seed & _M32, seed >> 32)
    return w[0] | (w[1] << 32)


def derive(digest, index):
    w = _block(int(digest), TAG_DERIVE, int(index) >> 1)
    if index & 1:
        return w[2] | (w[3] << 32)
    return w[0] | (w[1] << 32)


def _unit(hi, lo):
    return (float(((hi << 32) | lo) >> 12) + 0.5) * _INV52


def _uniform(digest, purpose, j):
    w = _block(digest, purpose, j >> 1)
    if j & 1:
        return _unit(w[2], w[3])
    return _unit(w[0], w[1])


def ppnd(p):
    """Standard normal quantile used to turn stream uniforms into Gaussian draws."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                         + 67265.770927008700853) * r + 45921.953931549871457) * r
                       + 13731.693765509461125) * r + 1971.5909503065514427) * r
                     + 133.14166789178437745) * r + 3.387132872796366608) / \
                   (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                         + 39307.89580009271061) * r + 21213.794301586595867) * r
                       + 5394.1960214247511077) * r + 687.1870074920579083) * r
                     + 42.313330701600911252) * r + 1.0)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734) / \
              (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r = r - 5.0
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772) / \
              (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    return -val if q < 0.0 else val


def _normal(digest, purpose, j):
    return ppnd(_uniform(digest, purpose, j))


def uniforms(digest, purpose, start, n):
    digest, start = int(digest), int(start)
    return np.array([_uniform(digest, purpose, start + i) for i in range(n)], dtype=np.float64)


def normals(digest, purpose, start, n):
    """Gaussian draws number ``start .. start+n-1`` of one stream."""
    digest, start = int(digest), int(start)
    return np.array([_normal(digest, purpose, start + i) for i in range(n)], dtype=np.float64)


def first_normals(digests, purpose):
    return np.array([_normal(int(d), purpose, 0) for d in digests], dtype=np.float64)


def derive_many(digest, start, n):
    digest, start = int(digest), int(start)
    return np.array([derive(digest, start + i) for i in range(n)], dtype=np.uint64)


def bridge_stay_count(digest, n_paths, horizon, x, y, barrier, window, above):
    barrier = [float(b) for b in barrier]
    window = [bool(w) for w in window]
    steps = len(barrier) - 1
    h = 1.0 / steps
    sh = math.sqrt(horizon * h)
    count = 0
    for p in range(n_paths):
        d = derive(int(digest), p)
        w = [0.0] * (steps + 1)
        for k in range(steps):
            w[k + 1] = w[k] + sh * _normal(d, PURPOSE_PATH, k)
        total = w[steps]
        ok = True
        for k in range(steps + 1):
            if window[k]:
                frac = k * h
                xk = x + (w[k] - frac * total) + frac * (y - x)
                if (xk < barrier[k]) if above else (xk > barrier[k]):
                    ok = False
                    break
        count += ok
    return count


# particle record: [x, t, death, spare, digest, gcount, node, origin]
_X, _T, _DEATH, _SPARE, _DIGEST, _GCOUNT, _NODE, _ORIGIN = range(8)


def _pnext(p):
    g = p[_GCOUNT]
    if g & 1:
        u = p[_SPARE]
    else:
        w = _block(p[_DIGEST], PURPOSE_STEP, g >> 1)
        u = _unit(w[0], w[1])
        p[_SPARE] = _unit(w[2], w[3])
    p[_GCOUNT] = g + 1
    return u


def _birth(p, digest):
    p[_DIGEST] = digest
    p[_GCOUNT] = 0
    p[_DEATH] = p[_T] - math.log(_pnext(p))


class Engine:
    """Binary BBM population advanced between synchronisation times (reference version)."""

    def __init__(self, t0, x0, digests, record=True, hard_limit=10_000_000,
                 n_labels=0, n_trackers=0):
        if not 0 <= n_labels <= MAX_LABELS or not 0 <= n_trackers <= MAX_TRACKERS:
            raise ValueError("too many label or tracker slots")
        self.record = bool(record)
        self.hard_limit = int(hard_limit)
        self.n_labels = int(n_labels)
        self.n_trackers = int(n_trackers)
        self.reset(t0, x0, digests)

    def reset(self, t0, x0, digests):
        xs = [float(v) for v in np.asarray(x0, dtype=np.float64)]
        ds = [int(v) for v in np.asarray(digests, dtype=np.uint64)]
        if len(xs) != len(ds):
            raise ValueError("x0 and digests must have equal length")
        self.t = float(t0)
        self.branch_events = 0
        self.killed = 0
        self._parts = []
        self._aux = []
        self._nodes = []
        for i, (x, d) in enumerate(zip(xs, ds)):
            p = [x, self.t, 0.0, 0.0, 0, 0, -1, i]
            _birth(p, d)
            if self.record:
                p[_NODE] = self._new_node(-1, i, self.t, x, d)
            self._parts.append(p)
            self._aux.append([-1.0] * self.n_labels + [-math.inf, math.nan] * self.n_trackers)

    def _new_node(self, parent, bit, t, x, digest):
        self._nodes.append([parent, bit, t, x, math.nan, math.nan, digest, OPEN])
        return len(self._nodes) - 1

    def _close(self, i, kind):
        if self.record:
            p = self._parts[i]
            q = self._nodes[p[_NODE]]
            q[4], q[5], q[7] = p[_T], p[_X], kind

    @property
    def n_alive(self):
        return len(self._parts)

    @property
    def n_nodes(self):
        return len(self._nodes)

    def advance(self, t_next):
        t_next = float(t_next)
        if t_next < self.t:
            raise ValueError(f"cannot advance backwards: {t_next} < {self.t}")
        parts, aux = self._parts, self._aux
        i = 0
        while i < len(parts):
            p = parts[i]
            if p[_DEATH] < t_next:
                dt = p[_DEATH] - p[_T]
                p[_X] += math.sqrt(dt) * ppnd(_pnext(p))
                p[_T] = p[_DEATH]
                parent = p[_NODE]
                w = _block(p[_DIGEST], TAG_DERIVE, 0)
                c = list(p)
                _birth(p, w[0] | (w[1] << 32))
                _birth(c, w[2] | (w[3] << 32))
                if self.record:
                    p[_NODE] = self._new_node(parent, 0, p[_T], p[_X], p[_DIGEST])
                    c[_NODE] = self._new_node(parent, 1, c[_T], c[_X], c[_DIGEST])
                parts.append(c)
                aux.append(list(aux[i]))
                self.branch_events += 1
                if len(parts) > self.hard_limit:
                    raise ParticleLimitExceeded(self.hard_limit, p[_T])
                continue
            dt = t_next - p[_T]
            if dt > 0:
                p[_X] += math.sqrt(dt) * ppnd(_pnext(p))
                p[_T] = t_next
            i += 1
        self.t = t_next

    def positions(self):
        return np.array([p[_X] for p in self._parts], dtype=np.float64)

    def node_ids(self):
        return np.array([p[_NODE] for p in self._parts], dtype=np.int64)

    def origins(self):
        return np.array([p[_ORIGIN] for p in self._parts], dtype=np.int64)

    def _slot(self, slot, limit):
        if not 0 <= slot < limit:
            raise IndexError(f"slot {slot} outside [0, {limit})")

    def labels(self, slot):
        self._slot(slot, self.n_labels)
        return np.array([int(a[slot]) for a in self._aux], dtype=np.int64)

    def stamp(self, slot):
        self._slot(slot, self.n_labels)
        for i, a in enumerate(self._aux):
            a[slot] = float(i)

    def track(self, slot, level):
        self._slot(slot, self.n_trackers)
        k = self.n_labels + 2 * slot
        for p, a in zip(self._parts, self._aux):
            e = p[_X] - level
            if e > a[k]:
                a[k] = e
            if e > 0.0 and math.isnan(a[k + 1]):
                a[k + 1] = self.t

    def tracker(self, slot):
        self._slot(slot, self.n_trackers)
        k = self.n_labels + 2 * slot
        return (np.array([a[k] for a in self._aux], dtype=np.float64),
                np.array([a[k + 1] for a in self._aux], dtype=np.float64))

    def _compact(self, mask):
        keep_p, keep_a = [], []
        nk = 0
        for i, m in enumerate(mask):
            if m:
                nk += 1
                self._close(i, KILLED)
            else:
                keep_p.append(self._parts[i])
                keep_a.append(self._aux[i])
        self._parts, self._aux = keep_p, keep_a
        self.killed += nk
        return nk

    def kill(self, mask):
        mask = np.asarray(mask, dtype=np.uint8)
        if len(mask) != len(self._parts):
            raise ValueError("mask length does not match the live population")
        return self._compact([bool(m) for m in mask])

    def _argmax(self):
        best = 0
        for i in range(1, len(self._parts)):
            if self._parts[i][_X] > self._parts[best][_X]:
                best = i
        return best

    def max_position(self):
        if not self._parts:
            return -math.inf
        return self._parts[self._argmax()][_X]

    def prune_below(self, level):
        if not self._parts:
            return 0
        best = self._argmax()
        return self._compact([p[_X] < level and i != best for i, p in enumerate(self._parts)])

    def prune_gap(self, gap):
        if not self._parts:
            return 0
        return self.prune_below(self._parts[self._argmax()][_X] - gap)

    def close_horizon(self):
        for i in range(len(self._parts)):
            self._close(i, HORIZON)

    def pair_split_scan(self, ns_nodes, nt_nodes, s):
        ns = [int(k) for k in ns_nodes]
        nt = [int(k) for k in nt_nodes]
        if not ns or not nt:
            return None
        for k in ns + nt:
            if not 0 <= k < len(self._nodes):
                raise IndexError(f"node {k} outside the table")
        members = set(ns)
        marked = set()
        for k in ns:
            while k >= 0 and k not in marked:
                marked.add(k)
                k = self._nodes[k][0]
        best = -math.inf
        for v in nt:
            prev, k = -1, v
            while k >= 0 and k not in marked:
                prev, k = k, self._nodes[k][0]
            if k < 0:
                continue
            if k in members or prev < 0:
                return float(s)
            best = max(best, self._nodes[prev][2])
        return None if best == -math.inf else best

    def node_table(self):
        out = np.empty(len(self._nodes), dtype=NODE_DTYPE)
        for k, q in enumerate(self._nodes):
            out[k] = tuple(q)
        first = np.flatnonzero((out["parent"] >= 0) & (out["bit"] == 0))
        par = out["parent"][first]
        out["end_t"][par] = out["birth_t"][first]
        out["end_x"][par] = out["birth_x"][first]
        out["kind"][par] = BRANCHED
        return out

    def particle_table(self):
        out = np.empty(len(self._parts), dtype=PARTICLE_DTYPE)
        for k, p in enumerate(self._parts):
            out[k] = tuple(p)
        return out

    def aux_table(self):
        width = self.n_labels + 2 * self.n_trackers
        return np.array(self._aux, dtype=np.float64).reshape(len(self._aux), width)

    def get_state(self):
        return {
            "t": self.t,
            "record": self.record,
            "hard_limit": self.hard_limit,
            "n_labels": self.n_labels,
            "n_trackers": self.n_trackers,
            "branch_events": self.branch_events,
            "killed": self.killed,
            "particles": self.particle_table(),
            "aux": self.aux_table(),
            "nodes": self.node_table(),
        }

    @classmethod
    def from_state(cls, state):
        eng = cls(state["t"], np.empty(0), np.empty(0, dtype=np.uint64),
                  record=state["record"], hard_limit=state["hard_limit"],
                  n_labels=state["n_labels"], n_trackers=state["n_trackers"])
        eng._parts = [
            [float(r["x"]), float(r["t"]), float(r["death"]), float(r["spare"]),
             int(r["digest"]), int(r["gcount"]), int(r["node"]), int(r["origin"])]
            for r in state["particles"]
        ]
        eng._aux = [[float(v) for v in row] for row in np.asarray(state["aux"])]
        if not eng._aux:
            eng._aux = [[] for _ in eng._parts]
        eng._nodes = [
            [int(r["parent"]), int(r["bit"]), float(r["birth_t"]), float(r["birth_x"]),
             float(r["end_t"]), float(r["end_x"]), int(r["digest"]), int(r["kind"])]
            for r in state["nodes"]
        ]
        eng.branch_events = int(state["branch_events"])
        eng.killed = int(state["killed"])
        return eng
