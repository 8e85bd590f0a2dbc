# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Philox4x32-10 streams, the BBM particle engine, bridge Monte Carlo.

``bbmlab._pycore`` implements the same functions in pure Python and must return
bit-identical results; tests compare the two.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, fabs, INFINITY, NAN, isnan
from libc.stdint cimport uint32_t, uint64_t, int64_t
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

from bbmlab._layout import MAX_LABELS, MAX_TRACKERS, NODE_DTYPE, PARTICLE_DTYPE
from bbmlab.errors import ParticleLimitExceeded

cnp.import_array()

DEF TAG_ROOT = 0x726F6F74
DEF TAG_DERIVE = 0x64657276
DEF P_STEP = 2
DEF P_PATH = 5
DEF K_OPEN = 0
DEF K_BRANCHED = 1
DEF K_KILLED = 2
DEF K_HORIZON = 3

cdef double INV52 = 1.0 / 4503599627370496.0

COMPILED = True


# ---------------------------------------------------------------- Philox ---

cdef inline void _philox(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3,
                         uint32_t k0, uint32_t k1, uint32_t* out) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t h0, l0, h1, l1
    cdef int r
    for r in range(10):
        if r > 0:
            k0 = <uint32_t>(k0 + 0x9E3779B9u)
            k1 = <uint32_t>(k1 + 0xBB67AE85u)
        p0 = <uint64_t>0xD2511F53u * <uint64_t>c0
        p1 = <uint64_t>0xCD9E8D57u * <uint64_t>c2
        h0 = <uint32_t>(p0 >> 32)
        l0 = <uint32_t>p0
        h1 = <uint32_t>(p1 >> 32)
        l1 = <uint32_t>p1
        c0 = h1 ^ c1 ^ k0
        c1 = l1
        c2 = h0 ^ c3 ^ k1
        c3 = l0
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline void _block(uint64_t digest, uint32_t purpose, uint64_t index,
                        uint32_t* out) noexcept nogil:
    _philox(<uint32_t>index, <uint32_t>(index >> 32), purpose, 0,
            <uint32_t>digest, <uint32_t>(digest >> 32), out)


cdef inline uint64_t _derive(uint64_t digest, uint64_t index) noexcept nogil:
    cdef uint32_t w[4]
    _block(digest, TAG_DERIVE, index >> 1, w)
    if index & 1:
        return (<uint64_t>w[2]) | ((<uint64_t>w[3]) << 32)
    return (<uint64_t>w[0]) | ((<uint64_t>w[1]) << 32)


cdef inline void _derive_pair(uint64_t digest, uint64_t* d0, uint64_t* d1) noexcept nogil:
    cdef uint32_t w[4]
    _block(digest, TAG_DERIVE, 0, w)
    d0[0] = (<uint64_t>w[0]) | ((<uint64_t>w[1]) << 32)
    d1[0] = (<uint64_t>w[2]) | ((<uint64_t>w[3]) << 32)


cdef inline double _unit(uint32_t hi, uint32_t lo) noexcept nogil:
    # 52 random bits centred in their cell: strictly inside (0, 1), exact in binary64
    return (<double>((((<uint64_t>hi) << 32) | lo) >> 12) + 0.5) * INV52


cdef inline double _uniform(uint64_t digest, uint32_t purpose, uint64_t j) noexcept nogil:
    cdef uint32_t w[4]
    _block(digest, purpose, j >> 1, w)
    if j & 1:
        return _unit(w[2], w[3])
    return _unit(w[0], w[1])


cdef inline double _ppnd(double p) noexcept nogil:
    # Wichura AS241 (PPND16), relative accuracy about 1e-16
    cdef double q = p - 0.5
    cdef double r, val
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                        + 67265.770927008700853) * r + 45921.953931549871457) * r
                      + 13731.693765509461125) * r + 1971.5909503065514427) * r
                    + 133.14166789178437745) * r + 3.387132872796366608) / \
                   (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                        + 39307.89580009271061) * r + 21213.794301586595867) * r
                      + 5394.1960214247511077) * r + 687.1870074920579083) * r
                    + 42.313330701600911252) * r + 1.0)
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = sqrt(-log(r))
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
    if q < 0.0:
        return -val
    return val


cdef inline double _normal(uint64_t digest, uint32_t purpose, uint64_t j) noexcept nogil:
    return _ppnd(_uniform(digest, purpose, j))


def philox4x32(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3, uint32_t k0, uint32_t k1):
    """One Philox4x32-10 block for counter (c0..c3) and key (k0, k1)."""
    cdef uint32_t w[4]
    _philox(c0, c1, c2, c3, k0, k1, w)
    return (w[0], w[1], w[2], w[3])


def seed_digest(uint64_t seed):
    cdef uint32_t w[4]
    _philox(0, 0, TAG_ROOT, 0, <uint32_t>seed, <uint32_t>(seed >> 32), w)
    return (<uint64_t>w[0]) | ((<uint64_t>w[1]) << 32)


def derive(uint64_t digest, uint64_t index):
    return _derive(digest, index)


def ppnd(double p):
    """Standard normal quantile used to turn stream uniforms into Gaussian draws."""
    return _ppnd(p)


def uniforms(uint64_t digest, uint32_t purpose, uint64_t start, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _uniform(digest, purpose, start + <uint64_t>i)
    return out


def normals(uint64_t digest, uint32_t purpose, uint64_t start, Py_ssize_t n):
    """Gaussian draws number ``start .. start+n-1`` of one stream."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _normal(digest, purpose, start + <uint64_t>i)
    return out


def first_normals(const uint64_t[::1] digests, uint32_t purpose):
    """Gaussian draw #0 of each stream in ``digests``."""
    cdef Py_ssize_t n = digests.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _normal(digests[i], purpose, 0)
    return out


def derive_many(uint64_t digest, uint64_t start, Py_ssize_t n):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _derive(digest, start + <uint64_t>i)
    return out


# ---------------------------------------------------------------- bridges ---

def bridge_stay_count(uint64_t digest, Py_ssize_t n_paths, double horizon, double x, double y,
                      const double[::1] barrier, const unsigned char[::1] window,
                      bint above):
    """Count bridge paths x -> y that stay on one side of ``barrier`` at flagged grid points.

    The grid has ``len(barrier) - 1`` equal steps over ``[0, horizon]``; path ``p``
    draws its increments from stream ``derive(digest, p)``.  ``above`` asks for
    X >= barrier, otherwise X <= barrier (both non-strict).
    """
    cdef Py_ssize_t steps = barrier.shape[0] - 1
    cdef Py_ssize_t p, k
    cdef int64_t count = 0
    cdef uint64_t d
    cdef double total, frac, xk
    cdef double h = 1.0 / <double>steps
    cdef double sh = sqrt(horizon * h)
    cdef bint ok
    cdef double* w = <double*>malloc((steps + 1) * sizeof(double))
    if w == NULL:
        raise MemoryError()
    try:
        with nogil:
            for p in range(n_paths):
                d = _derive(digest, <uint64_t>p)
                w[0] = 0.0
                for k in range(steps):
                    w[k + 1] = w[k] + sh * _normal(d, P_PATH, <uint64_t>k)
                total = w[steps]
                ok = True
                for k in range(steps + 1):
                    if window[k]:
                        frac = <double>k * h
                        xk = x + (w[k] - frac * total) + frac * (y - x)
                        if above:
                            if xk < barrier[k]:
                                ok = False
                                break
                        else:
                            if xk > barrier[k]:
                                ok = False
                                break
                if ok:
                    count += 1
    finally:
        free(w)
    return count


# ----------------------------------------------------------------- engine ---

cdef struct Particle:
    double x
    double t
    double death
    double spare
    uint64_t digest
    uint64_t gcount
    int64_t node
    int64_t origin


cdef struct Node:
    int64_t parent
    int64_t bit
    double birth_t
    double birth_x
    double end_t
    double end_x
    uint64_t digest
    int64_t kind


cdef inline double _pnext(Particle* p) noexcept nogil:
    # next uniform of the particle's own stream; odd draws come from the cached half block
    cdef uint32_t w[4]
    cdef double u
    if p.gcount & 1:
        u = p.spare
    else:
        _block(p.digest, P_STEP, p.gcount >> 1, w)
        u = _unit(w[0], w[1])
        p.spare = _unit(w[2], w[3])
    p.gcount += 1
    return u


cdef inline void _birth(Particle* p, uint64_t digest) noexcept nogil:
    # draw 0 of a particle stream is its lifetime, draws 1, 2, ... its Gaussian increments
    p.digest = digest
    p.gcount = 0
    p.death = p.t - log(_pnext(p))


cdef class Engine:
    """Binary BBM population advanced between synchronisation times.

    Particles carry their own counter-based stream (``digest``); a child's digest
    is ``derive(parent_digest, bit)``, so every particle's randomness is fixed by
    its tree coordinate alone.  Optional per-particle side data (``n_labels``
    ancestry labels, ``n_trackers`` running path maxima) is inherited at branching.
    """
    cdef Particle* parts
    cdef double* aux
    cdef Py_ssize_t n
    cdef Py_ssize_t cap
    cdef Node* nodes
    cdef Py_ssize_t nn
    cdef Py_ssize_t ncap
    cdef readonly int n_labels
    cdef readonly int n_trackers
    cdef int width
    cdef readonly double t
    cdef readonly bint record
    cdef readonly int64_t hard_limit
    cdef readonly int64_t branch_events
    cdef readonly int64_t killed
    cdef double fail_t

    def __cinit__(self):
        self.parts = NULL
        self.aux = NULL
        self.nodes = NULL
        self.n = 0
        self.cap = 0
        self.nn = 0
        self.ncap = 0

    def __init__(self, double t0, x0, digests, bint record=True, int64_t hard_limit=10_000_000,
                 int n_labels=0, int n_trackers=0):
        if not 0 <= n_labels <= MAX_LABELS or not 0 <= n_trackers <= MAX_TRACKERS:
            raise ValueError("too many label or tracker slots")
        self.record = record
        self.hard_limit = hard_limit
        self.n_labels = n_labels
        self.n_trackers = n_trackers
        self.width = n_labels + 2 * n_trackers
        self.reset(t0, x0, digests)

    def reset(self, double t0, x0, digests):
        """Start a fresh population, keeping the allocated tables for reuse."""
        cdef double[::1] xs = np.ascontiguousarray(x0, dtype=np.float64)
        cdef uint64_t[::1] ds = np.ascontiguousarray(digests, dtype=np.uint64)
        cdef Py_ssize_t i, k
        cdef Particle* p
        if xs.shape[0] != ds.shape[0]:
            raise ValueError("x0 and digests must have equal length")
        self.t = t0
        self.n = 0
        self.nn = 0
        self.branch_events = 0
        self.killed = 0
        if self._reserve(max(16, xs.shape[0])) != 0:
            raise MemoryError()
        if self.record and self._nreserve(max(16, 2 * xs.shape[0])) != 0:
            raise MemoryError()
        for i in range(xs.shape[0]):
            p = &self.parts[i]
            p.x = xs[i]
            p.t = t0
            p.spare = 0.0
            p.origin = i
            _birth(p, ds[i])
            p.node = -1
            if self.record:
                p.node = self._new_node(-1, i, t0, xs[i], ds[i])
            for k in range(self.n_labels):
                self.aux[i * self.width + k] = -1.0
            for k in range(self.n_trackers):
                self.aux[i * self.width + self.n_labels + 2 * k] = -INFINITY
                self.aux[i * self.width + self.n_labels + 2 * k + 1] = NAN
        self.n = xs.shape[0]

    def __dealloc__(self):
        free(self.parts)
        free(self.aux)
        free(self.nodes)

    cdef int _reserve(self, Py_ssize_t need) noexcept nogil:
        cdef Py_ssize_t c
        cdef Particle* q
        cdef double* a
        if need <= self.cap:
            return 0
        c = need if need > 2 * self.cap else 2 * self.cap
        q = <Particle*>realloc(self.parts, c * sizeof(Particle))
        if q == NULL:
            return -1
        self.parts = q
        if self.width:
            a = <double*>realloc(self.aux, c * self.width * sizeof(double))
            if a == NULL:
                return -1
            self.aux = a
        self.cap = c
        return 0

    cdef int _nreserve(self, Py_ssize_t need) noexcept nogil:
        cdef Py_ssize_t c
        cdef Node* q
        if need <= self.ncap:
            return 0
        c = need if need > 2 * self.ncap else 2 * self.ncap
        q = <Node*>realloc(self.nodes, c * sizeof(Node))
        if q == NULL:
            return -1
        self.nodes = q
        self.ncap = c
        return 0

    cdef inline int64_t _new_node(self, int64_t parent, int64_t bit, double t, double x,
                                  uint64_t digest) noexcept nogil:
        cdef Node* q = &self.nodes[self.nn]
        q.parent = parent
        q.bit = bit
        q.birth_t = t
        q.birth_x = x
        q.end_t = NAN
        q.end_x = NAN
        q.digest = digest
        q.kind = K_OPEN
        self.nn += 1
        return self.nn - 1

    cdef inline void _close(self, Py_ssize_t i, int64_t kind) noexcept nogil:
        cdef Node* q
        if self.record:
            q = &self.nodes[self.parts[i].node]
            q.end_t = self.parts[i].t
            q.end_x = self.parts[i].x
            q.kind = kind

    @property
    def n_alive(self):
        return self.n

    @property
    def n_nodes(self):
        return self.nn

    def advance(self, double t_next):
        """Move every live particle to ``t_next``, branching at exponential clocks."""
        cdef int status
        if t_next < self.t:
            raise ValueError(f"cannot advance backwards: {t_next} < {self.t}")
        with nogil:
            status = self._advance(t_next)
        if status == 1:
            raise ParticleLimitExceeded(self.hard_limit, self.fail_t)
        if status == 2:
            raise MemoryError("particle or node table allocation failed")
        self.t = t_next

    cdef int _advance(self, double t_next) noexcept nogil:
        cdef Py_ssize_t i = 0
        cdef Particle* p
        cdef Particle* c
        cdef uint64_t d0, d1
        cdef int64_t parent
        cdef double dt
        while i < self.n:
            p = &self.parts[i]
            if p.death < t_next:
                if self._reserve(self.n + 1) != 0:
                    return 2
                if self.record and self._nreserve(self.nn + 2) != 0:
                    return 2
                p = &self.parts[i]
                dt = p.death - p.t
                p.x += sqrt(dt) * _ppnd(_pnext(p))
                p.t = p.death
                # the branched parent is closed lazily in node_table(): its end is
                # the children's birth, and touching it here would miss the cache
                parent = p.node
                _derive_pair(p.digest, &d0, &d1)
                c = &self.parts[self.n]
                c[0] = p[0]
                if self.width:
                    memcpy(&self.aux[self.n * self.width], &self.aux[i * self.width],
                           self.width * sizeof(double))
                _birth(p, d0)
                _birth(c, d1)
                if self.record:
                    p.node = self._new_node(parent, 0, p.t, p.x, p.digest)
                    c.node = self._new_node(parent, 1, c.t, c.x, c.digest)
                self.n += 1
                self.branch_events += 1
                if self.n > self.hard_limit:
                    self.fail_t = p.t
                    return 1
                continue
            dt = t_next - p.t
            if dt > 0:
                p.x += sqrt(dt) * _ppnd(_pnext(p))
                p.t = t_next
            i += 1
        return 0

    # -- queries ----------------------------------------------------------

    def positions(self):
        cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(self.n, dtype=np.float64)
        cdef Py_ssize_t i
        for i in range(self.n):
            out[i] = self.parts[i].x
        return out

    def node_ids(self):
        cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(self.n, dtype=np.int64)
        cdef Py_ssize_t i
        for i in range(self.n):
            out[i] = self.parts[i].node
        return out

    def origins(self):
        cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(self.n, dtype=np.int64)
        cdef Py_ssize_t i
        for i in range(self.n):
            out[i] = self.parts[i].origin
        return out

    def labels(self, int slot):
        cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(self.n, dtype=np.int64)
        cdef Py_ssize_t i
        _check_slot(slot, self.n_labels)
        for i in range(self.n):
            out[i] = <int64_t>self.aux[i * self.width + slot]
        return out

    def stamp(self, int slot):
        """Label each live particle with its current index; descendants inherit it."""
        cdef Py_ssize_t i
        _check_slot(slot, self.n_labels)
        for i in range(self.n):
            self.aux[i * self.width + slot] = <double>i

    def track(self, int slot, double level):
        """Fold ``x - level`` at the current time into each particle's running maximum."""
        cdef Py_ssize_t i
        cdef double e
        cdef double* a
        _check_slot(slot, self.n_trackers)
        with nogil:
            for i in range(self.n):
                a = &self.aux[i * self.width + self.n_labels + 2 * slot]
                e = self.parts[i].x - level
                if e > a[0]:
                    a[0] = e
                if e > 0.0 and isnan(a[1]):
                    a[1] = self.t

    def tracker(self, int slot):
        """(running max of x - level, first time it was positive) per live particle."""
        _check_slot(slot, self.n_trackers)
        cdef cnp.ndarray[cnp.float64_t, ndim=1] mx = np.empty(self.n, dtype=np.float64)
        cdef cnp.ndarray[cnp.float64_t, ndim=1] first = np.empty(self.n, dtype=np.float64)
        cdef Py_ssize_t i
        for i in range(self.n):
            mx[i] = self.aux[i * self.width + self.n_labels + 2 * slot]
            first[i] = self.aux[i * self.width + self.n_labels + 2 * slot + 1]
        return mx, first

    # -- pruning ----------------------------------------------------------

    cdef int64_t _compact(self, const unsigned char* m) noexcept nogil:
        cdef Py_ssize_t i, j = 0
        cdef int64_t nk = 0
        for i in range(self.n):
            if m[i]:
                nk += 1
                self._close(i, K_KILLED)
            else:
                if j != i:
                    self.parts[j] = self.parts[i]
                    if self.width:
                        memcpy(&self.aux[j * self.width], &self.aux[i * self.width],
                               self.width * sizeof(double))
                j += 1
        self.n = j
        self.killed += nk
        return nk

    def kill(self, mask):
        """Remove particles where ``mask`` is true, closing their genealogy nodes."""
        cdef const unsigned char[::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
        if m.shape[0] != self.n:
            raise ValueError("mask length does not match the live population")
        if self.n == 0:
            return 0
        return self._compact(&m[0])

    cdef Py_ssize_t _argmax(self) noexcept nogil:
        cdef Py_ssize_t i, best = 0
        for i in range(1, self.n):
            if self.parts[i].x > self.parts[best].x:
                best = i
        return best

    def max_position(self):
        if self.n == 0:
            return -INFINITY
        return self.parts[self._argmax()].x

    def prune_below(self, double level):
        """Kill every particle strictly below ``level`` except the current maximum."""
        cdef Py_ssize_t i, best
        cdef int64_t nk
        if self.n == 0:
            return 0
        cdef unsigned char* m = <unsigned char*>malloc(self.n)
        if m == NULL:
            raise MemoryError()
        best = self._argmax()
        for i in range(self.n):
            m[i] = self.parts[i].x < level and i != best
        nk = self._compact(m)
        free(m)
        return nk

    def prune_gap(self, double gap):
        """Kill particles more than ``gap`` below the current maximum."""
        if self.n == 0:
            return 0
        return self.prune_below(self.parts[self._argmax()].x - gap)

    # -- genealogy / state ------------------------------------------------

    def close_horizon(self):
        cdef Py_ssize_t i
        for i in range(self.n):
            self._close(i, K_HORIZON)

    def pair_split_scan(self, ns_nodes, nt_nodes, double s):
        """Max split time between node sets observed at ``s`` and later (see observables)."""
        cdef int64_t k, prev, v
        cdef double best = -INFINITY
        ns = [int(k) for k in ns_nodes]
        nt = [int(k) for k in nt_nodes]
        if not ns or not nt:
            return None
        for k in ns + nt:
            if not 0 <= k < self.nn:
                raise IndexError(f"node {k} outside the table")
        members = set(ns)
        marked = set()
        for k in ns:
            while k >= 0 and k not in marked:
                marked.add(k)
                k = self.nodes[k].parent
        for v in nt:
            prev = -1
            k = v
            while k >= 0 and k not in marked:
                prev = k
                k = self.nodes[k].parent
            if k < 0:
                continue
            if k in members or prev < 0:
                return s
            if self.nodes[prev].birth_t > best:
                best = self.nodes[prev].birth_t
        return None if best == -INFINITY else best

    def node_table(self):
        out = np.empty(self.nn, dtype=NODE_DTYPE)
        cdef cnp.ndarray buf = out
        if self.nn:
            memcpy(cnp.PyArray_DATA(buf), self.nodes, self.nn * sizeof(Node))
        first = np.flatnonzero((out["parent"] >= 0) & (out["bit"] == 0))
        par = out["parent"][first]
        out["end_t"][par] = out["birth_t"][first]
        out["end_x"][par] = out["birth_x"][first]
        out["kind"][par] = K_BRANCHED
        return out

    def particle_table(self):
        out = np.empty(self.n, dtype=PARTICLE_DTYPE)
        cdef cnp.ndarray buf = out
        if self.n:
            memcpy(cnp.PyArray_DATA(buf), self.parts, self.n * sizeof(Particle))
        return out

    def aux_table(self):
        out = np.empty((self.n, self.width), dtype=np.float64)
        cdef cnp.ndarray buf = out
        if self.n and self.width:
            memcpy(cnp.PyArray_DATA(buf), self.aux, self.n * self.width * sizeof(double))
        return out

    def get_state(self):
        return {
            "t": self.t,
            "record": bool(self.record),
            "hard_limit": int(self.hard_limit),
            "n_labels": int(self.n_labels),
            "n_trackers": int(self.n_trackers),
            "branch_events": int(self.branch_events),
            "killed": int(self.killed),
            "particles": self.particle_table(),
            "aux": self.aux_table(),
            "nodes": self.node_table(),
        }

    @classmethod
    def from_state(cls, state):
        cdef Engine eng = cls(state["t"], np.empty(0), np.empty(0, dtype=np.uint64),
                              record=state["record"], hard_limit=state["hard_limit"],
                              n_labels=state["n_labels"], n_trackers=state["n_trackers"])
        cdef cnp.ndarray parts = np.ascontiguousarray(state["particles"], dtype=PARTICLE_DTYPE)
        cdef cnp.ndarray aux = np.ascontiguousarray(state["aux"], dtype=np.float64)
        cdef cnp.ndarray nodes = np.ascontiguousarray(state["nodes"], dtype=NODE_DTYPE)
        if eng._reserve(max(16, parts.shape[0])) != 0 or eng._nreserve(max(16, nodes.shape[0])) != 0:
            raise MemoryError()
        if parts.shape[0]:
            memcpy(eng.parts, cnp.PyArray_DATA(parts), parts.shape[0] * sizeof(Particle))
            if eng.width:
                memcpy(eng.aux, cnp.PyArray_DATA(aux), parts.shape[0] * eng.width * sizeof(double))
        if nodes.shape[0]:
            memcpy(eng.nodes, cnp.PyArray_DATA(nodes), nodes.shape[0] * sizeof(Node))
        eng.n = parts.shape[0]
        eng.nn = nodes.shape[0]
        eng.branch_events = state["branch_events"]
        eng.killed = state["killed"]
        return eng


cdef int _check_slot(int slot, int limit) except -1:
    if slot < 0 or slot >= limit:
        raise IndexError(f"slot {slot} outside [0, {limit})")
    return 0


assert PARTICLE_DTYPE.itemsize == sizeof(Particle)
assert NODE_DTYPE.itemsize == sizeof(Node)
