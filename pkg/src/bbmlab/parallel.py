"""Trial-level parallelism with schedule-independent results.

Every trial draws only from its own derived stream and results are collected
by trial index, so the output is identical for any thread count.  The
compiled engine releases the GIL while advancing particles, which is where
the threads actually overlap.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence


def map_trials(worker: Callable[[int, dict], object], n_trials: int, threads: int = 1,
               chunk: int | None = None) -> list:
    """``[worker(i, scratch) for i in range(n_trials)]`` spread over ``threads``.

    ``scratch`` is a per-thread dict the worker may use to keep reusable
    buffers (for instance an engine it resets between trials).
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    if threads == 1 or n_trials <= 1:
        scratch: dict = {}
        return [worker(i, scratch) for i in range(n_trials)]
    local = threading.local()
    size = chunk or max(1, n_trials // (threads * 8))
    bounds = [(a, min(a + size, n_trials)) for a in range(0, n_trials, size)]

    def run(b: tuple[int, int]) -> list:
        scratch = getattr(local, "scratch", None)
        if scratch is None:
            scratch = local.scratch = {}
        return [worker(i, scratch) for i in range(*b)]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts: Sequence[list] = list(pool.map(run, bounds))
    return [r for part in parts for r in part]
