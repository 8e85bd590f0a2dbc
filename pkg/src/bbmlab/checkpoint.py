"""Binary checkpoints for a paused ``Simulation``.

Layout (little-endian)::

    b"BBM1"  u32 version  u64 body length
    u64 trial_seed  u32 path length  u64[path]        root stream key
    blocks: 4-byte tag, u64 length, payload
        CONF  run config as JSON
        ENGS  engine scalars + next sync index
        NODE  node table (parent, bit, times, positions, digest, end kind)
        PART  live particle records
        AUXT  per-particle label/tracker slots
        SNAP  stored snapshots
        ACCU  ergodic accumulators
    u64 blake2b-64 checksum of everything before it

The three failure modes raise distinct exceptions: ``CheckpointVersionError``,
``CheckpointTruncatedError`` and ``CheckpointChecksumError``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from bbmlab._layout import NODE_DTYPE, PARTICLE_DTYPE
from bbmlab.engine import PruneConfig, RunConfig, Simulation, PopulationSnapshot
from bbmlab.errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from bbmlab.kernels import core
from bbmlab.observables import ErgodicAccumulator
from bbmlab.rng import RngStreamKey

MAGIC = b"BBM1"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _config_json(cfg: RunConfig) -> bytes:
    d = {
        "T": cfg.T,
        "mode": cfg.mode,
        "dt": cfg.dt,
        "snapshot_times": list(cfg.snapshot_times),
        "prune": {"mode": cfg.prune.mode, "A": cfg.prune.A, "L": cfg.prune.L, "N_max": cfg.prune.N_max},
        "hard_particle_limit": cfg.hard_particle_limit,
        "record_genealogy": cfg.record_genealogy,
    }
    # floats survive JSON exactly via repr round-tripping
    return json.dumps(d, sort_keys=True).encode()


def _config_from(raw: bytes, key: RngStreamKey) -> RunConfig:
    d = json.loads(raw.decode())
    return RunConfig(
        T=d["T"], mode=d["mode"], dt=d["dt"], snapshot_times=tuple(d["snapshot_times"]),
        prune=PruneConfig(**d["prune"]), root_stream=key,
        hard_particle_limit=d["hard_particle_limit"], record_genealogy=d["record_genealogy"],
    )


@dataclass
class Checkpoint:
    config: RunConfig
    engine_state: dict
    next_index: int
    snapshots: dict = field(default_factory=dict)
    accumulators: dict = field(default_factory=dict)

    def resume(self, hooks=()) -> Simulation:
        eng = core.Engine.from_state(self.engine_state)
        snaps = {
            t: PopulationSnapshot(t, s.positions.copy(), None if s.nodes is None else s.nodes.copy())
            for t, s in self.snapshots.items()
        }
        return Simulation(self.config, hooks, _engine=eng, _next=self.next_index, _snapshots=snaps)


def _block(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def encode(sim: Simulation, accumulators: dict | None = None) -> bytes:
    cfg = sim.config
    st = sim.engine.get_state()
    key = cfg.root_stream
    keyb = struct.pack("<QI", key.trial_seed, len(key.path)) + struct.pack(f"<{len(key.path)}Q", *key.path)
    engs = struct.pack("<dqqqqqqq", st["t"], st["record"], st["hard_limit"], st["n_labels"],
                       st["n_trackers"], st["branch_events"], st["killed"], sim._next)
    snap = [struct.pack("<Q", len(sim.snapshots))]
    for t, s in sorted(sim.snapshots.items()):
        nodes = np.full(len(s), -1, np.int64) if s.nodes is None else s.nodes
        snap.append(struct.pack("<dQ", t, len(s)))
        snap.append(np.ascontiguousarray(s.positions, "<f8").tobytes())
        snap.append(np.ascontiguousarray(nodes, "<i8").tobytes())
    acc = [struct.pack("<Q", len(accumulators or {}))]
    for name, a in sorted((accumulators or {}).items()):
        nb = name.encode()
        acc.append(struct.pack("<I", len(nb)) + nb)
        acc.append(struct.pack("<ddQ", a.t_start, a.elapsed, len(a.x_grid)))
        acc.append(np.asarray(a.x_grid, "<f8").tobytes() + np.asarray(a.mass, "<f8").tobytes()
                   + np.asarray(a.mass_ge, "<f8").tobytes())
    aux = np.ascontiguousarray(st["aux"], "<f8")
    body = keyb + b"".join([
        _block(b"CONF", _config_json(cfg)),
        _block(b"ENGS", engs),
        _block(b"NODE", np.ascontiguousarray(st["nodes"]).tobytes()),
        _block(b"PART", np.ascontiguousarray(st["particles"]).tobytes()),
        _block(b"AUXT", struct.pack("<Q", aux.shape[1] if aux.ndim == 2 else 0) + aux.tobytes()),
        _block(b"SNAP", b"".join(snap)),
        _block(b"ACCU", b"".join(acc)),
    ])
    head = _HEAD.pack(MAGIC, VERSION, len(body))
    return head + body + _checksum(head + body)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError("checkpoint block runs past the end of the file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype, n: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * n), dtype=dtype).copy()


def decode(data: bytes) -> Checkpoint:
    if len(data) < _HEAD.size:
        raise CheckpointTruncatedError(f"file is {len(data)} bytes, shorter than the header")
    magic, version, body_len = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    end = _HEAD.size + body_len
    if len(data) < end + 8:
        raise CheckpointTruncatedError(f"file has {len(data)} bytes, header declares {end + 8}")
    if _checksum(data[:end]) != data[end:end + 8]:
        raise CheckpointChecksumError("checksum mismatch: checkpoint is corrupted")
    r = _Reader(data[_HEAD.size:end])
    seed, plen = r.unpack("QI")
    key = RngStreamKey(seed, r.unpack(f"{plen}Q"))
    blocks = {}
    while r.pos < len(r.data):
        tag = r.take(4)
        (n,) = r.unpack("Q")
        blocks[tag] = _Reader(r.take(n))
    cfg = _config_from(blocks[b"CONF"].data, key)
    t, record, hard, nl, nt, be, killed, nxt = blocks[b"ENGS"].unpack("dqqqqqqq")
    nodes = np.frombuffer(blocks[b"NODE"].data, dtype=NODE_DTYPE).copy()
    parts = np.frombuffer(blocks[b"PART"].data, dtype=PARTICLE_DTYPE).copy()
    ar = blocks[b"AUXT"]
    (width,) = ar.unpack("Q")
    aux = np.frombuffer(ar.data[ar.pos:], dtype="<f8").copy().reshape(len(parts), width)
    state = {"t": t, "record": bool(record), "hard_limit": hard, "n_labels": nl, "n_trackers": nt,
             "branch_events": be, "killed": killed, "particles": parts, "aux": aux, "nodes": nodes}
    sr = blocks[b"SNAP"]
    snaps = {}
    for _ in range(sr.unpack("Q")[0]):
        ts, n = sr.unpack("dQ")
        pos = sr.array("<f8", n)
        nd = sr.array("<i8", n)
        snaps[ts] = PopulationSnapshot(ts, pos, nd if record else None)
    accr = blocks[b"ACCU"]
    accs = {}
    for _ in range(accr.unpack("Q")[0]):
        (ln,) = accr.unpack("I")
        name = accr.take(ln).decode()
        t_start, elapsed, n = accr.unpack("ddQ")
        grid = accr.array("<f8", n)
        a = ErgodicAccumulator(grid, t_start=t_start)
        a.mass = accr.array("<f8", n)
        a.mass_ge = accr.array("<f8", n)
        a.elapsed = elapsed
        accs[name] = a
    return Checkpoint(cfg, state, int(nxt), snaps, accs)


def save_checkpoint(path, sim: Simulation, accumulators: dict | None = None) -> None:
    data = encode(sim, accumulators)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
