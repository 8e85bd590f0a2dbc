"""Acceptance criteria 1-11 at full scale.

Every experiment runs through the command line at threads=8 and is judged
from the CSVs it writes; criterion 10 reruns each one at threads=1 and
compares the files byte for byte.  A verdict line per criterion is printed
in the terminal summary.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from bbmlab.cli import main
from bbmlab.lab import subsequence_average_check

pytestmark = pytest.mark.acceptance

SEED = 1
SQRT2 = math.sqrt(2.0)

FULL_SCALE = {
    "moment-check": ["--trials", "100000"],
    "bridge-check": ["--paths", "100000", "--steps", "1000", "--tuples", "50"],
    "bkr-check": ["--instances", "1000", "--n-max", "3", "--size-max", "4"],
    "tail": ["--t", "10", "--trials", "20000"],
    "early-branching": ["--s", "6", "--t", "12", "--x", "-1", "--R", "1,2,4", "--trials", "10000"],
    "localization": ["--t", "10", "--x", "-1", "--alpha", "0.4", "--r", "1,2,3", "--trials", "1000",
                     "--dt", "0.01"],
    "decorrelate": ["--R", "2", "--s", "6", "--t", "10", "--x", "-1", "--y", "-1", "--outer", "200",
                    "--inner", "500"],
    "ergodic": ["--T", "50", "--eps", "0.1", "--L", "8", "--seeds", "8"],
}


@dataclass
class Run:
    code: int
    out: Path
    seconds: float

    def table(self, name: str) -> list[dict]:
        with open(self.out / f"{name}.csv", newline="") as fh:
            return list(csv.DictReader(fh))

    def result(self, name: str) -> dict:
        return {r["key"]: r["value"] for r in self.table(f"{name}_summary") if r["section"] == "result"}


_RUNS: dict[tuple[str, int], Run] = {}


@pytest.fixture(scope="session")
def run(tmp_path_factory):
    def go(sub: str, threads: int = 8) -> Run:
        key = (sub, threads)
        if key not in _RUNS:
            out = tmp_path_factory.mktemp(f"{sub}-threads{threads}")
            t0 = time.perf_counter()
            code = main([sub, "--seed", str(SEED), "--threads", str(threads), "--out", str(out)]
                        + FULL_SCALE[sub])
            _RUNS[key] = Run(code, out, time.perf_counter() - t0)
        return _RUNS[key]

    return go


def _f(v: str) -> float:
    return float(v)


@pytest.mark.criterion(1, "moment oracles, |z| <= 5 at 1e5 trials")
def test_criterion_01_moment_oracles(run, record_property):
    r = run("moment-check")
    rows = r.table("moment_check")
    record_property("detail", ", ".join(f"{x['check']} z={_f(x['z']):+.2f}" for x in rows)
                    + f", {r.seconds:.0f}s")
    assert r.code == 0
    rhs = {x["check"]: _f(x["rhs"]) for x in rows}
    assert rhs["many_to_one_const"] == pytest.approx(math.e, rel=1e-12)
    assert rhs["many_to_one_tail"] == pytest.approx(math.e**3 * norm.sf(math.sqrt(3)), rel=1e-9)
    assert rhs["many_to_one_tail"] == pytest.approx(0.8364, abs=5e-4)
    # the many-to-two side is a quadrature over the split time
    assert rhs["many_to_two_const"] == pytest.approx(2 * math.e**3 - math.e**2, rel=1e-5)
    assert all(abs(_f(x["z"])) <= 5 for x in rows)
    assert r.seconds <= 120


@pytest.mark.criterion(2, "bridge closed forms within 3 SE plus grid allowance")
def test_criterion_02_bridge_closed_forms(run, record_property):
    r = run("bridge-check")
    rows = {x["check"]: x for x in r.table("bridge_check")}
    record_property("detail", ", ".join(
        f"{k} est={_f(x['estimate']):.5f} exact={_f(x['closed_form']):.5f} se={_f(x['se']):.1e} "
        f"allow={_f(x['grid_allowance']):.1e}" for k, x in rows.items()) + f", {r.seconds:.0f}s")
    assert r.code == 0
    assert _f(rows["nonneg"]["closed_form"]) == pytest.approx(0.632121, abs=5e-7)
    assert _f(rows["subinterval"]["closed_form"]) == pytest.approx(0.52050, abs=5e-6)
    for x in rows.values():
        d, se, allow = _f(x["difference"]), _f(x["se"]), _f(x["grid_allowance"])
        assert -3 * se <= d <= allow + 3 * se
    # one command serves criteria 2 and 4, so it gets their combined budget
    assert r.seconds <= 60 + 120


@pytest.mark.criterion(3, "BKR brute force, zero violations in 1000 instances")
def test_criterion_03_bkr(run, record_property):
    r = run("bkr-check")
    rows = r.table("bkr_check")
    worst = max(_f(x["lhs"]) - _f(x["rhs"]) for x in rows)
    record_property("detail", f"{len(rows)} instances, max lhs-rhs={worst:.3g}, {r.seconds:.1f}s")
    assert r.code == 0 and len(rows) == 1000
    assert all(int(x["n"]) <= 3 for x in rows)
    assert worst <= 1e-12
    assert sum(int(x["violated"]) for x in rows) == 0
    assert r.seconds <= 10


@pytest.mark.criterion(4, "line-bound dominance on 50 tuples")
def test_criterion_04_line_bound(run, record_property):
    r = run("bridge-check")
    rows = r.table("bridge_check_line_bound")
    margin = max(_f(x["estimate"]) - _f(x["bound"]) - 3 * _f(x["se"]) for x in rows)
    record_property("detail", f"{len(rows)} tuples, max(est - bound - 3se)={margin:.4f}")
    assert len(rows) == 50
    assert all(_f(x["bound"]) < 1 for x in rows)
    assert margin <= 0


@pytest.mark.criterion(5, "right-tail slope within 0.35 of -sqrt(2)")
def test_criterion_05_right_tail(run, record_property):
    r = run("tail")
    slope = _f(r.result("right_tail")["slope"])
    record_property("detail", f"slope={slope:.4f}, {r.seconds:.0f}s")
    assert r.code == 0
    assert abs(slope + SQRT2) <= 0.35
    assert r.seconds <= 300


@pytest.mark.criterion(6, "early branching nonincreasing with p(1) - p(4) > 2 SE")
def test_criterion_06_early_branching(run, record_property):
    r = run("early-branching")
    rows = r.table("early_branching")
    p = [_f(x["p_hat"]) for x in rows]
    se = [_f(x["se"]) for x in rows]
    gap = (p[0] - p[-1]) / math.hypot(se[0], se[-1])
    record_property("detail", f"p={[round(v, 4) for v in p]}, gap={gap:.1f} SE, {r.seconds:.0f}s")
    assert r.code == 0
    assert [_f(x["R"]) for x in rows] == [1.0, 2.0, 4.0]
    assert all(b <= a for a, b in zip(p, p[1:]))
    assert gap > 2
    assert r.seconds <= 600


@pytest.mark.criterion(7, "localization nonincreasing in r within 2 SE")
def test_criterion_07_localization(run, record_property):
    r = run("localization")
    rows = r.table("localization")
    p = [_f(x["p_hat"]) for x in rows]
    se = [_f(x["se"]) for x in rows]
    record_property("detail", f"r={[x['r'] for x in rows]}, p={[round(v, 4) for v in p]}, "
                              f"{r.seconds:.0f}s")
    assert r.code == 0
    # every requested r is reported (with t = 10 none is below the t >= 3r cutoff)
    assert [_f(x["r"]) for x in rows] == [1.0, 2.0, 3.0]
    assert all(b <= a + 2 * math.hypot(sa, sb) for a, b, sa, sb in zip(p, p[1:], se, se[1:]))
    assert r.seconds <= 1200


@pytest.mark.criterion(8, "decorrelation, at most 1% of outer trials beyond 3 SE")
def test_criterion_08_decorrelation(run, record_property):
    r = run("decorrelate")
    rows = r.table("decorrelation")
    viol = sum(_f(x["diff"]) > 3 * _f(x["se"]) for x in rows)
    record_property("detail", f"{viol}/{len(rows)} violations, {r.seconds:.0f}s")
    assert r.code == 0 and len(rows) == 200
    assert viol / len(rows) <= 0.01
    assert r.seconds <= 900


@pytest.mark.criterion(9, "ergodic functional form, Z dependence and L sensitivity")
def test_criterion_09_ergodic(run, record_property):
    r = run("ergodic")
    fits = r.table("ergodic_fits")
    r2 = [_f(x["r2"]) for x in fits]
    z = np.array([_f(x["z_proxy"]) for x in fits])
    slope = np.array([_f(x["slope"]) for x in fits])
    corr = float(np.corrcoef(slope, z)[0, 1])
    sens = r.table("ergodic_sensitivity")
    shifted = [x for x in sens if not (math.isfinite(_f(x["shift"]))
                                       and abs(_f(x["shift"])) < 3 * _f(x["cross_seed_sd"]))]
    # a zero-SD cell with zero shift is not a shift
    shifted = [x for x in shifted if not (_f(x["shift"]) == 0 and _f(x["cross_seed_sd"]) == 0)]
    aborted = sum(math.isfinite(_f(x["aborted_at"])) for x in sens) // max(1, len(sens) // len(fits))
    record_property("detail", f"min R2={min(r2):.3f}, corr={corr:.3f}, cells off={len(shifted)}, "
                              f"sensitivity seeds aborted={aborted}, {r.seconds:.0f}s")
    assert r.code == 0 and len(fits) == 8
    assert min(r2) >= 0.9
    assert corr > 0.3
    assert not shifted
    assert r.seconds <= 3600


@pytest.mark.criterion(10, "byte-identical CSVs at threads=1 and threads=8")
def test_criterion_10_determinism(run, record_property):
    differing = []
    for sub in FULL_SCALE:
        a, b = run(sub, 8), run(sub, 1)
        assert a.code == b.code
        fa = sorted(p.name for p in a.out.glob("*.csv"))
        fb = sorted(p.name for p in b.out.glob("*.csv"))
        assert fa == fb and fa
        differing += [f"{sub}/{n}" for n in fa if (a.out / n).read_bytes() != (b.out / n).read_bytes()]
    record_property("detail", f"{len(FULL_SCALE)} experiments, differing files: {differing or 'none'}")
    assert not differing


@pytest.mark.criterion(11, "subsequence lemma bound on 100 random signals")
def test_criterion_11_subsequence(record_property):
    rng = np.random.default_rng(20261019)
    t0 = time.perf_counter()
    held = 0
    for case in range(100):
        kind = case % 3
        if kind == 0:
            beta = rng.uniform(0.2, 0.95)
            sched = [math.exp(n**beta) for n in range(1, 400)]
        elif kind == 1:
            p = rng.uniform(1.0, 4.0)
            sched = [float(n) ** p for n in range(1, 400)]
        else:
            sched = [n * math.log(n + 1.0) for n in range(1, 400)]
        sched = [s for s in sched if s <= 2e3][:40]
        horizon = sched[-1]
        widths = rng.exponential(rng.uniform(0.05, 5.0), size=150)
        breaks = np.concatenate([[0.0], np.cumsum(widths)])
        while breaks[-1] < horizon:
            breaks = np.concatenate([breaks, breaks[-1:] + rng.exponential(5.0, size=50).cumsum()])
        values = rng.uniform(-1, 1, size=len(breaks) - 1)
        values[rng.random(len(values)) < 0.2] = rng.choice([-1.0, 1.0])
        res = subsequence_average_check(breaks.tolist(), values.tolist(), sched)
        held += bool(res.holds and all(s <= b for s, b in zip(res.sup_abs_rho, res.bound)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{held}/100 held, {elapsed:.2f}s")
    assert held == 100
    assert elapsed <= 5
