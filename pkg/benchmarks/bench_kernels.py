"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel runs on both cores with identical inputs; the outputs are
compared before anything is timed, so a speedup is only reported for
matching results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bbmlab import _pycore
from bbmlab.rng import RngStreamKey

try:
    from bbmlab import _core
except ImportError:  # pragma: no cover
    _core = None

DIGEST = RngStreamKey(12345).digest


def _normals(core):
    return core.normals(DIGEST, 4, 0, 20_000)


def _derive(core):
    return core.derive_many(DIGEST, 0, 20_000)


def _bridge(core):
    steps = 200
    barrier = np.zeros(steps + 1)
    window = np.ones(steps + 1, dtype=np.uint8)
    return core.bridge_stay_count(DIGEST, 500, 2.0, 1.0, 1.0, barrier, window, True)


def _engine(core):
    eng = core.Engine(0.0, np.zeros(1), np.array([DIGEST], dtype=np.uint64))
    eng.advance(7.0)
    return eng.positions()


KERNELS = {
    "normals (20k)": _normals,
    "derive_many (20k)": _derive,
    "bridge_stay_count (500 paths x 200 steps)": _bridge,
    "engine advance to t=7": _engine,
}


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    return a == b


def best_of(fn, core, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(core)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled core not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':45s} {'compiled':>11s} {'python':>11s} {'speedup':>9s}")
    for name, fn in KERNELS.items():
        if not _same(fn(_core), fn(_pycore)):
            print(f"{name:45s} outputs differ between cores")
            return 1
        tc = best_of(fn, _core, args.repeat)
        tp = best_of(fn, _pycore, args.repeat)
        print(f"{name:45s} {tc * 1e3:9.2f}ms {tp * 1e3:9.2f}ms {tp / tc:8.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
