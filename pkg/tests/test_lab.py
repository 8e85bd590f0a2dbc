from __future__ import annotations

import csv
import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmlab.errors import BBMError, ConfigError
from bbmlab.lab import (
    BkrInstance,
    ExperimentReport,
    bkr_brute_force,
    exp_decorrelation,
    exp_early_branching,
    exp_ergodic,
    exp_localization,
    exp_right_tail,
    random_bkr_instance,
    subsequence_average_check,
    write_csv,
)
from bbmlab.lab.checks import bkr_campaign, random_line_tuple
from bbmlab.lab.report import format_value, render_csv
from bbmlab.bridge import bridge_two_point_line_bound
from bbmlab.rng import RngStreamKey

HALF = Fraction(1, 2)


def test_bkr_single_index_is_vacuous():
    inst = BkrInstance(((HALF, HALF),), (frozenset({0}),), (frozenset({0, 1}),))
    res = bkr_brute_force(inst)
    assert res.lhs == 0 and not res.violated


def test_bkr_saturated_pair():
    full = frozenset({0, 1})
    inst = BkrInstance(((HALF, HALF), (HALF, HALF)), (full, full), (full, full))
    res = bkr_brute_force(inst)
    assert (res.lhs, res.rhs, res.violated) == (1, 1, False)


def test_bkr_hand_example():
    # A_0 = E_1 = {0} on two fair coins, other events empty: lhs = rhs = 1/4
    e = frozenset()
    inst = BkrInstance(((HALF, HALF), (HALF, HALF)), (frozenset({0}), e), (e, frozenset({0})))
    res = bkr_brute_force(inst)
    assert res.lhs == Fraction(1, 4) and res.rhs == Fraction(1, 4)


def test_bkr_instance_validation():
    with pytest.raises(ConfigError):
        BkrInstance(((HALF, Fraction(1, 3)),), (frozenset(),), (frozenset(),))


def test_bkr_campaign_has_no_violations():
    rep = bkr_campaign(1000, RngStreamKey(7))
    assert len(rep.rows) == 1000
    assert sum(rep.column("violated")) == 0
    assert rep.passed


def test_random_instances_are_deterministic():
    k = RngStreamKey(3).child(5)
    assert random_bkr_instance(k) == random_bkr_instance(k)


def test_subsequence_zero_and_one():
    sched = [1.0, 2.0, 4.0, 8.0]
    zero = subsequence_average_check([0.0, 10.0], [0.0], sched)
    assert all(s == 0 for s in zero.sup_abs_rho) and zero.holds
    one = subsequence_average_check([0.0, 10.0], [1.0], sched)
    assert all(s == 1 for s in one.sup_abs_rho)
    assert all(r == 1 for r in one.rho_at_schedule) and one.holds


def test_subsequence_sign_sine():
    horizon = 400.0
    breaks = [k * math.pi for k in range(int(horizon / math.pi) + 1)]
    values = [1.0 if k % 2 == 0 else -1.0 for k in range(len(breaks) - 1)]
    sched = [math.exp(n**0.5) for n in range(1, 40) if math.exp(n**0.5) <= breaks[-1]]
    res = subsequence_average_check(breaks, values, sched)
    assert res.holds
    assert all(s <= b for s, b in zip(res.sup_abs_rho, res.bound))


def test_subsequence_input_checks():
    with pytest.raises(ConfigError):
        subsequence_average_check([0.0, 1.0], [2.0], [0.5, 1.0])
    with pytest.raises(ConfigError):
        subsequence_average_check([0.5, 1.0], [0.0], [0.6, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 3), st.floats(-1, 1)), min_size=1, max_size=40),
       st.floats(0.1, 0.9))
def test_subsequence_bound_always_holds(pieces, beta):
    breaks = [0.0]
    for w, _ in pieces:
        breaks.append(breaks[-1] + w)
    sched = [math.exp(n**beta) for n in range(1, 200) if math.exp(n**beta) <= breaks[-1]]
    if len(sched) < 2:
        return
    assert subsequence_average_check(breaks, [v for _, v in pieces], sched).holds


def test_line_tuples_satisfy_sampling_rule():
    for i in range(20):
        z1, z2, r1, r2, t = random_line_tuple(RngStreamKey(0).child(i))
        assert z1 >= 0 and z2 >= 0 and r1 + r2 < t
        assert bridge_two_point_line_bound(z1, z2, r1, r2, t) < 1


def test_format_value_round_trip():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17, math.pi):
        assert float(format_value(v)) == v
    assert format_value(True) == "true" and format_value(None) == ""
    assert format_value(float("nan")) == "nan"


def test_write_csv_contract(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(["a", "b"], [], str(p))
    assert p.read_bytes() == b"a,b\n"
    write_csv(["name", "v"], [['x,"y"', 0.1], ["plain", 2]], str(p))
    raw = p.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(io.StringIO(raw.decode())))
    assert rows == [["name", "v"], ['x,"y"', "0.10000000000000001"], ["plain", "2"]]
    assert float(rows[1][1]) == 0.1


def test_write_csv_names_unwritable_path(tmp_path):
    bad = tmp_path / "missing" / "t.csv"
    with pytest.raises(BBMError, match="missing"):
        write_csv(["a"], [[1]], str(bad))


def test_report_write(tmp_path):
    rep = ExperimentReport("demo", ["x", "se"], [[1.0, 0.1]], {"slope": -1.5}, {"seed": 3},
                           ["a note"], True, {"extra": (["k"], [[1]])})
    paths = rep.write(str(tmp_path))
    assert [p.rsplit("/", 1)[1] for p in paths] == ["demo.csv", "demo_summary.csv", "demo_extra.csv"]
    summary = (tmp_path / "demo_summary.csv").read_text()
    assert "config,seed,3" in summary and "result,passed,true" in summary


# experiments at small scale


def test_right_tail_far_left_and_monotone():
    rep = exp_right_tail(t=10.0, trials=2000, stream=RngStreamKey(5), bootstrap=20)
    hits = rep.column("hits")
    assert all(a >= b for a, b in zip(hits, hits[1:]))
    p = dict(zip(rep.column("y"), rep.column("p_hat")))
    # the root may wait before branching, so the far-left value is close to, not exactly, 1
    assert p[-10.0] >= 0.99


def test_right_tail_guard():
    with pytest.raises(ConfigError):
        exp_right_tail(t=13.0, trials=10)


def test_early_branching_degenerate_thresholds():
    rep = exp_early_branching(s=3.0, t=6.0, R_list=(0.0, 1.0, 7.0), trials=400, stream=RngStreamKey(2))
    p = rep.column("p_hat")
    assert p[0] == rep.summary["p_both_nonempty"]
    assert p[-1] == 0.0
    assert p[0] >= p[1] >= p[2]


def test_early_branching_validation():
    with pytest.raises(ConfigError):
        exp_early_branching(s=6.0, t=5.0, trials=1)
    with pytest.raises(ConfigError):
        exp_early_branching(R_list=(2.0, 1.0), trials=1)


def test_localization_monotone_in_alpha():
    # for windows with min(s, t - s) >= 1 a larger alpha lowers the line, so the events are nested
    counts = []
    for a in (0.02, 0.2, 0.4, 0.5):
        rep = exp_localization(t=6.0, alpha=a, r_list=(1.0, 2.0), trials=150, stream=RngStreamKey(9))
        counts.append(rep.column("count"))
    for j in range(2):
        col = [c[j] for c in counts]
        assert col == sorted(col)
    assert counts[0][0] == min(c[0] for c in counts)


def test_localization_skips_short_horizons():
    rep = exp_localization(t=6.0, r_list=(1.0, 3.0), trials=20, stream=RngStreamKey(1))
    assert rep.column("r") == [1.0]
    assert any("r=3.0 skipped" in n for n in rep.notes)
    with pytest.raises(ConfigError):
        exp_localization(alpha=0.7, trials=1)


def test_decorrelation_trivial_thresholds():
    low = exp_decorrelation(R=1.0, s=3.0, t=5.0, x=-1e9, y=-1e9, outer_trials=6, inner_resamples=30,
                            stream=RngStreamKey(4))
    assert all(a == 1.0 and e == 1.0 for a, e in zip(low.column("p_A"), low.column("p_E")))
    assert all(p <= 1.0 for p in low.column("p_AED"))
    high = exp_decorrelation(R=1.0, s=3.0, t=5.0, x=1e9, y=1e9, outer_trials=6, inner_resamples=30,
                             stream=RngStreamKey(4))
    assert set(high.column("p_AED")) == {0.0} and set(high.column("p_A_times_p_E")) == {0.0}
    assert high.summary["violations"] == 0


def test_ergodic_small_run():
    rep = exp_ergodic(T=20.0, seeds=3, stream=RngStreamKey(1), sensitivity=False)
    top = [row for row in rep.rows if row[1] == 2.0]
    assert all(row[2] == pytest.approx(1.0) for row in top)
    for seed in range(3):
        F = np.array([row[2] for row in rep.rows if row[0] == seed])
        assert np.all(np.diff(F) >= 0)
    assert rep.summary["subsequence_bound_holds"]


def test_ergodic_rejects_empty_window():
    with pytest.raises(ConfigError):
        exp_ergodic(eps=1.0)
