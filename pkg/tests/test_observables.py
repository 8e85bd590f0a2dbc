from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbmlab.analytic import SQRT2, centering
from bbmlab.engine import PopulationSnapshot, RunConfig, run, split_time
from bbmlab.errors import ConfigError, EmptyPopulation
from bbmlab.kernels import core
from bbmlab.observables import (
    ErgodicAccumulator,
    argmax_id,
    derivative_martingale,
    derivative_martingale_from,
    extremal_pair_split_scan,
    extremal_set,
    localization_check,
    localization_line,
    max_offset,
)
from bbmlab.parallel import map_trials
from bbmlab.rng import RngStreamKey

EXP_MINUS_SQRT2 = 0.2431167344342142108  # mpmath
M10 = 11.6998753234582302211  # mpmath: sqrt2*10 - 3/(2 sqrt2) log 10


def _snap(xs, t=1.0):
    return PopulationSnapshot.from_entries(t, [((i,), x) for i, x in enumerate(xs)])


def test_max_offset_examples():
    assert max_offset(_snap([centering(3.0)], 3.0)) == 0.0
    assert max_offset(_snap([1.0, 2.0])) == pytest.approx(2 - math.sqrt(2), abs=1e-15)
    with pytest.raises(EmptyPopulation):
        max_offset(_snap([]))


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(-200, 200))
def test_max_offset_monotone_under_insertion(xs, extra):
    assert max_offset(_snap(xs + [extra], 2.0)) >= max_offset(_snap(xs, 2.0))


def test_extremal_set_boundaries():
    s = _snap([0.1, 2.0, 1.5])
    assert extremal_set(s, -1e9) == [(0,), (1,), (2,)]
    assert extremal_set(s, max_offset(s) + 1e-9) == []
    assert argmax_id(s) in extremal_set(s, max_offset(s))


def test_derivative_martingale_examples():
    assert derivative_martingale(_snap([SQRT2 * 4.0], 4.0)) == 0.0
    assert derivative_martingale(_snap([SQRT2 * 3.0 - 1.0], 3.0)) == pytest.approx(EXP_MINUS_SQRT2, rel=1e-14)


def test_derivative_martingale_order_free():
    rng = np.random.default_rng(0)
    x = rng.normal(5, 3, 1000)
    assert derivative_martingale_from(x, 4.0) == derivative_martingale_from(x[::-1], 4.0)


def test_derivative_martingale_has_mean_zero():
    root = RngStreamKey(404)
    n = 100_000

    def one(i, scratch):
        d = np.array([root.child(i).digest], dtype=np.uint64)
        eng = scratch.get("e") or scratch.setdefault("e", core.Engine(0.0, np.zeros(1), d, record=False))
        eng.reset(0.0, np.zeros(1), d)
        eng.advance(2.0)
        return derivative_martingale_from(eng.positions(), 2.0)

    z = np.array(map_trials(one, n, 4))
    assert abs(z.mean()) < 5 * z.std(ddof=1) / math.sqrt(n)


def test_ergodic_accumulator_examples():
    acc = ErgodicAccumulator([-1.0, 0.0, 1.0])
    for _ in range(5):
        acc.accumulate(0.0, 1.0)
    assert acc.result().tolist() == [0.0, 1.0, 1.0]
    assert acc.upper_result().tolist() == [1.0, 1.0, 0.0]
    alt = ErgodicAccumulator([0.0])
    for k in range(10):
        alt.accumulate(2.0 if k % 2 else -2.0, 0.5)
    assert alt.result().tolist() == [0.5]
    with pytest.raises(ConfigError):
        ErgodicAccumulator([0.0]).result()
    with pytest.raises(ConfigError):
        ErgodicAccumulator([1.0, 0.0])
    with pytest.raises(ConfigError):
        acc.accumulate(0.0, 0.0)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 2)), min_size=1, max_size=40))
def test_accumulator_curves(samples):
    grid = np.linspace(-4, 4, 33)
    a, b = ErgodicAccumulator(grid), ErgodicAccumulator(grid)
    for k, (off, w) in enumerate(samples):
        (a if k % 2 else b).accumulate(off, w)
    if a.elapsed == 0:
        return
    m = a.merge(b)
    F, G = m.result(), m.upper_result()
    assert np.all(np.diff(F) >= 0) and np.all(np.diff(G) <= 0)
    assert np.all(F + G >= 1 - 1e-12)
    assert m.elapsed == pytest.approx(a.elapsed + b.elapsed)


def test_localization_line_value():
    line = localization_line([5.0], 10.0, 0.4)[0]
    assert line == pytest.approx(M10 / 2 - 5**0.4, rel=1e-14)
    assert line == pytest.approx(3.946283723013236621, rel=1e-14)


def test_localization_examples():
    times = np.round(np.arange(0, 1001) * 0.01, 12)
    deep = localization_check(times, np.full(len(times), -1e6), 10.0, 1.0, 0.4)
    assert not deep.violated and deep.first_violation_time is None
    # the zero path sits below the line at s = 5; the verdict covers the whole window
    zero = localization_check(times, np.zeros(len(times)), 10.0, 1.0, 0.4)
    assert zero.violated == bool(np.any(localization_line(times[100:901], 10.0, 0.4) < 0))
    mid = localization_check(np.array([5.0]), np.array([0.0]), 10.0, 5.0, 0.4)
    assert not mid.violated
    on_line = times / 10.0 * centering(10.0)
    res = localization_check(times, on_line, 10.0, 1.0, 0.4)
    assert res.violated and res.first_violation_time == pytest.approx(1.0)


def test_localization_input_checks():
    t = np.linspace(0, 10, 11)
    with pytest.raises(ConfigError):
        localization_check(t, np.zeros(11), 10.0, 6.0, 0.4)
    with pytest.raises(ConfigError):
        localization_check(t[:5], np.zeros(5), 10.0, 1.0, 0.4)


def _brute_pair_max(g, snap_s, snap_t, x, s):
    best = None
    ms, mt = centering(snap_s.time), centering(snap_t.time)
    for a, xa in zip(snap_s.nodes, snap_s.positions):
        if xa - ms < x:
            continue
        for b, xb in zip(snap_t.nodes, snap_t.positions):
            if xb - mt < x:
                continue
            q = split_time(g, g.id_of(a), g.id_of(b), snap_s.time, snap_t.time)
            best = q if best is None else max(best, q)
    return best


@pytest.mark.parametrize("seed", range(6))
def test_pair_split_scan_brute_force(seed):
    res = run(RunConfig(T=5.5, snapshot_times=(3.0, 5.5), root_stream=RngStreamKey(seed, (8,))))
    g = res.genealogy
    s3, s5 = res.snapshots[3.0], res.snapshots[5.5]
    for x in (-3.0, -1.5, -0.5, 0.5):
        assert extremal_pair_split_scan(g, s3, s5, x) == _brute_pair_max(g, s3, s5, x, 3.0)


def test_pair_split_scan_edge_cases():
    res = run(RunConfig(T=2.0, snapshot_times=(1.0, 2.0), root_stream=RngStreamKey(3)))
    g = res.genealogy
    s1, s2 = res.snapshots[1.0], res.snapshots[2.0]
    assert extremal_pair_split_scan(g, s1, s2, 1e9) is None
    single = run(RunConfig(T=0.01, snapshot_times=(0.005, 0.01), root_stream=RngStreamKey(0)))
    assert single.stats.n_alive == 1
    a, b = single.snapshots[0.005], single.snapshots[0.01]
    assert extremal_pair_split_scan(single.genealogy, a, b, -1e9) == 0.005
    with pytest.raises(ConfigError):
        extremal_pair_split_scan(g, s2, s1, 0.0)
