from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbmlab.bridge import (
    BridgeEventSpec,
    FunctionalSpec,
    bridge_nonneg_prob,
    bridge_subinterval_nonneg_prob,
    bridge_two_point_line_bound,
    grid_bias_allowance,
    many_to_one_check,
    many_to_two_check,
    many_to_two_rhs,
    mc_bridge_event_prob,
    mc_bridge_event_prob_exact,
    pair_expectation,
    subinterval_prob_shifted,
)
from bbmlab.errors import ConfigError
from bbmlab.rng import RngStreamKey, gaussian_draws

# mpmath references
ONE_MINUS_INV_E = 0.632120558828557678404476229839
SUBINTERVAL_1_2_1 = 0.520499877813046537682746653892
ONE_MINUS_E_M24 = 0.999999999962248654557209022484
TAIL_3 = 0.836206261918558214235112059  # e^3 Phi(-sqrt3)
SECOND_MOMENT_1_2 = 32.7820177474446852546266318486  # 2e^3 - e^2


def test_nonneg_prob_examples():
    assert bridge_nonneg_prob(2, 1, 1) == pytest.approx(ONE_MINUS_INV_E, rel=1e-15)
    assert bridge_nonneg_prob(1, 0, 5) == 0.0
    assert bridge_nonneg_prob(1, 3, 4) == pytest.approx(ONE_MINUS_E_M24, rel=1e-15)
    assert 1 - bridge_nonneg_prob(1, 3, 4) == pytest.approx(3.775e-11, rel=1e-3)


def test_nonneg_prob_monotone_on_lattice():
    grid = np.linspace(0, 3, 13)
    for t in (0.5, 2.0, 7.0):
        p = np.array([[bridge_nonneg_prob(t, x, y) for y in grid] for x in grid])
        assert np.all((p >= 0) & (p <= 1))
        assert np.all(np.diff(p, axis=0) >= 0) and np.all(np.diff(p, axis=1) >= 0)


@pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, -0.5)])
def test_nonneg_prob_domain(args):
    with pytest.raises(ConfigError):
        bridge_nonneg_prob(*args)


def test_line_bound_examples():
    assert bridge_two_point_line_bound(1, 1, 1, 1, 4) == pytest.approx(4.0, rel=1e-15)
    assert bridge_two_point_line_bound(0, 0, 0, 0, 3.0) == 0.0
    assert bridge_two_point_line_bound(1, 0, 0, 0, 10) == 0.0
    with pytest.raises(ConfigError):
        bridge_two_point_line_bound(-1, 0, 0, 0, 1)
    with pytest.raises(ConfigError):
        bridge_two_point_line_bound(1, 1, 2, 2, 4)


def test_zero_bound_event_has_probability_zero():
    # bridge pinned at 0 on a line that also ends at 0: any excursion above it is a crossing
    spec = BridgeEventSpec(10.0, 0.0, 0.0, barrier="line", params=(1.0, 0.0), direction="stay_below")
    assert mc_bridge_event_prob_exact(spec, 2000, 100, RngStreamKey(1)) == (0.0, 0.0)
    # plain grid monitoring misses crossings, less so on finer grids
    coarse = mc_bridge_event_prob(spec, 4000, 20, RngStreamKey(2))[0]
    fine = mc_bridge_event_prob(spec, 4000, 2000, RngStreamKey(2))[0]
    assert coarse > fine > 0


def test_subinterval_examples():
    assert bridge_subinterval_nonneg_prob(1, 2, 1) == pytest.approx(SUBINTERVAL_1_2_1, rel=1e-14)
    assert bridge_subinterval_nonneg_prob(1, 2, 100) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        bridge_subinterval_nonneg_prob(2, 2, 1)


def test_shifted_subinterval_reduces_to_closed_form():
    assert subinterval_prob_shifted(1.0, 2.0, 1.0, 0.0) == pytest.approx(SUBINTERVAL_1_2_1, abs=1e-11)
    assert subinterval_prob_shifted(1.0, 2.0, 1.0, 0.05) > SUBINTERVAL_1_2_1


def test_grid_allowance_shrinks_with_steps():
    a = [grid_bias_allowance("nonneg", n, t=2.0, x=1.0, y=1.0) for n in (100, 1000, 10000)]
    assert a[0] > a[1] > a[2] > 0
    assert a[1] / a[2] == pytest.approx(math.sqrt(10), rel=0.05)


def test_mc_nonneg_within_allowance():
    spec = BridgeEventSpec(2.0, 1.0, 1.0)
    p, se = mc_bridge_event_prob(spec, 20_000, 1000, RngStreamKey(10))
    allow = grid_bias_allowance("nonneg", 1000, t=2.0, x=1.0, y=1.0)
    assert -3 * se <= p - ONE_MINUS_INV_E <= allow + 3 * se


def test_mc_trivial_events():
    never = BridgeEventSpec(1.0, 0.0, 0.0, barrier="level", params=(1e9,))
    always = BridgeEventSpec(1.0, 0.0, 0.0, barrier="level", params=(-1e9,))
    assert mc_bridge_event_prob(never, 500, 50, RngStreamKey(0)) == (0.0, 0.0)
    assert mc_bridge_event_prob(always, 500, 50, RngStreamKey(0)) == (1.0, 0.0)
    assert mc_bridge_event_prob_exact(never, 500, 50, RngStreamKey(0)) == (0.0, 0.0)
    assert mc_bridge_event_prob_exact(always, 500, 50, RngStreamKey(0))[0] == 1.0


@pytest.mark.parametrize("spec, truth", [
    (BridgeEventSpec(2.0, 1.0, 1.0), ONE_MINUS_INV_E),
    (BridgeEventSpec(2.0, 0.0, 1.0, r1=1.0), SUBINTERVAL_1_2_1),
    # line from 0.5 to 2 and bridge from 0 to 1: the gap is a bridge from 0.5 to 1
    (BridgeEventSpec(3.0, 0.0, 1.0, barrier="line", params=(0.5, 2.0), direction="stay_below"),
     1 - math.exp(-2 * 0.5 * 1.0 / 3.0)),
])
def test_exact_estimator_unbiased_on_coarse_grid(spec, truth):
    p, se = mc_bridge_event_prob_exact(spec, 40_000, 16, RngStreamKey(6))
    assert abs(p - truth) < 4 * se


def test_exact_estimator_rejects_curved_barrier():
    spec = BridgeEventSpec(10.0, 0.0, 0.0, barrier="envelope", params=(0.4,))
    with pytest.raises(ConfigError):
        mc_bridge_event_prob_exact(spec, 500, 50, RngStreamKey(0))


@pytest.mark.parametrize("kw", [
    dict(t=0.0, x=0, y=0), dict(t=1.0, x=0, y=0, r1=0.6, r2=0.5), dict(t=1.0, x=0, y=0, barrier="wall"),
    dict(t=1.0, x=0, y=0, direction="sideways"), dict(t=1.0, x=0, y=0, barrier="line", params=(1.0,)),
])
def test_event_spec_validation(kw):
    with pytest.raises(ConfigError):
        BridgeEventSpec(**kw)


def test_functional_spec_expectations():
    assert FunctionalSpec("const", c=2.5).expect(0, 1) == 2.5
    ge = FunctionalSpec("ge", a=3.0)
    assert math.exp(3) * ge.expect(0.0, 3.0) == pytest.approx(TAIL_3, rel=1e-14)
    le = FunctionalSpec("le", a=3.0)
    assert ge.expect(0.0, 3.0) + le.expect(0.0, 3.0) == pytest.approx(1.0, abs=1e-15)
    assert ge.expect(3.0, 0.0) == 1.0


def test_many_to_one_zero_functional():
    res = many_to_one_check(FunctionalSpec("const", c=0.0), 1.0, 100, RngStreamKey(1))
    assert (res.lhs, res.rhs) == (0.0, 0.0)


def test_many_to_one_const_small():
    res = many_to_one_check(FunctionalSpec("const"), 1.0, 20_000, RngStreamKey(2), threads=4)
    assert res.rhs == pytest.approx(math.e, rel=1e-15)
    assert abs(res.z) <= 5


def test_many_to_one_guards():
    with pytest.raises(ConfigError):
        many_to_one_check(FunctionalSpec(), 5.0, 10, RngStreamKey(0))
    with pytest.raises(ConfigError):
        many_to_one_check(FunctionalSpec(), 0.0, 10, RngStreamKey(0))


def test_many_to_two_rhs_closed_form():
    one = FunctionalSpec("const")
    assert many_to_two_rhs(one, one, 1.0, 2.0, 256) == pytest.approx(SECOND_MOMENT_1_2, rel=1e-5)
    # no branching window: the integral vanishes and the rhs is the many-to-one value
    f = FunctionalSpec("ge", a=0.5)
    assert many_to_two_rhs(f, one, 0.0, 2.0, 64) == pytest.approx(math.exp(2) * f.expect(0.0, 2.0), rel=1e-12)
    zero = FunctionalSpec("const", c=0.0)
    assert many_to_two_rhs(zero, zero, 1.0, 2.0, 64) == 0.0


@pytest.mark.parametrize("f, g", [
    (FunctionalSpec("ge", a=0.5), FunctionalSpec("le", a=0.2)),
    (FunctionalSpec("ge", a=1.0), FunctionalSpec("ge", a=-0.3)),
])
def test_pair_expectation_against_monte_carlo(f, g):
    t, s, gamma = 2.0, 1.5, 0.8
    n = 400_000
    k = RngStreamKey(33)
    w = gaussian_draws(k.child(0), n, 0.0, gamma)
    b1 = w + gaussian_draws(k.child(1), n, 0.0, t - gamma)
    b2 = w + gaussian_draws(k.child(2), n, 0.0, s - gamma)
    v = f.values(b1) * g.values(b2)
    assert abs(v.mean() - pair_expectation(f, g, t, s, gamma)) < 5 * v.std(ddof=1) / math.sqrt(n)


def test_many_to_two_indicator_small():
    f, g = FunctionalSpec("ge", a=0.0), FunctionalSpec("le", a=1.0)
    res = many_to_two_check(f, g, 1.0, 2.0, 128, 20_000, RngStreamKey(4), threads=4)
    assert abs(res.z) <= 5


@given(st.floats(0.01, 10), st.floats(0, 4), st.floats(0, 4))
def test_closed_forms_are_probabilities(t, x, y):
    assert 0 <= bridge_nonneg_prob(t, x, y) <= 1
    if y > 0:
        r = t / 2
        assert 0 <= bridge_subinterval_nonneg_prob(r, t, y) <= 1
