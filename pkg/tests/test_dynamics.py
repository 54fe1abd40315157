from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from conftest import const_ifs, make_ifs
from samlab import bundle
from samlab.dynamics import (DIAGNOSTIC_HEADER, FlowPoint, LogTime, Suspension, equidistribution_trace,
                             ergodicity_diagnostic, flow, flow_samples, flow_shift_count, period_of,
                             rational_lock, skew_product_step, write_diagnostic_csv)
from samlab.symbolic import BernoulliSeq, DomainError, PeriodicSeq, lam, shift, stopping_time_t, stopping_time_tau

ROOFS_1_3 = make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "1/8", ("1/2", "1/2"))])
MIXED = make_ifs([("1/2", "1/3", ("0", "0")), ("1/3", "1/4", ("1/2", "1/2")), ("2/3", "1/2", ("0", "1/2"))])


def _same(p: FlowPoint, seq, t) -> bool:
    return p.seq.prefix(30) == seq.prefix(30) and float(p.t) == pytest.approx(t, abs=1e-12)


def test_flow_examples():
    s = BernoulliSeq([0.5, 0.5], 4)
    susp = Suspension(const_ifs("1/2", "1/2"))
    assert _same(flow(FlowPoint(s), 3, susp), shift(s, 3), 0)
    susp = Suspension(const_ifs("1/2", "1/4"))
    assert _same(flow(FlowPoint(s), 3, susp), shift(s, 1), 1)
    alt = PeriodicSeq((), (0, 1))
    p = flow(FlowPoint(alt), 5, Suspension(ROOFS_1_3))
    # 1 + 3 + 1 = 5 lands exactly on a roof: (σ²·, 1) is identified with (σ³·, 0)
    assert _same(p, shift(alt, 3), 0) and p.shifts == 3
    p = flow(FlowPoint(alt), Fraction(49, 10), Suspension(ROOFS_1_3))
    assert _same(p, shift(alt, 2), 0.9) and p.shifts == 2


def test_flow_rejects_negative_time():
    with pytest.raises(DomainError):
        flow(FlowPoint(PeriodicSeq((), (0,))), -1, Suspension(ROOFS_1_3))


def test_period_examples():
    susp = Suspension(make_ifs([("1/2", "1/2", ("0", "0")), ("1/3", "1/3", ("1/2", "1/2"))]))
    assert period_of(PeriodicSeq((), (0,)), susp) == pytest.approx(1)
    assert period_of(PeriodicSeq((), (1,)), susp) == pytest.approx(math.log2(3))
    assert period_of(PeriodicSeq((), (0, 1)), susp) == pytest.approx(1 + math.log2(3))
    with pytest.raises(DomainError):
        period_of(BernoulliSeq(susp.ifs.probs, 0), susp)
    with pytest.raises(DomainError):
        period_of(PeriodicSeq((1,), (0,)), susp)


def test_flow_semigroup_law():
    rng = np.random.default_rng(0)
    susp = Suspension(MIXED)
    for k in range(100):
        s = BernoulliSeq(MIXED.probs, k)
        a = Fraction(int(rng.integers(0, 2000)), 100)
        b = Fraction(int(rng.integers(0, 2000)), 100)
        p = FlowPoint(s, LogTime(Fraction(int(rng.integers(0, 100)), 100)))
        one, two = flow(flow(p, a, susp), b, susp), flow(p, a + b, susp)
        assert one.shifts == two.shifts
        assert abs(float(one.t) - float(two.t)) <= 2.0**-40
        assert one.seq.prefix(20) == two.seq.prefix(20)


def test_shift_count_matches_stopping_time_for_constant_roof():
    ifs = const_ifs("1/2", "1/2", k=3)
    susp = Suspension(ifs)
    for n in range(0, 30):
        s = BernoulliSeq(ifs.probs, n)
        assert flow_shift_count(s, n, susp) == stopping_time_t(s, n, ifs)


def test_shift_count_matches_log_accumulation():
    """Crossings up to time T = largest k with |λ2(i|k)| >= 2^-T, decided in exact arithmetic."""
    susp = Suspension(MIXED)
    for case in range(200):
        s = BernoulliSeq(MIXED.probs, (5, case))
        T = case % 25
        k = 0
        while abs(lam(MIXED, s.prefix(k + 1), 2)) >= Fraction(1, 2**T):
            k += 1
        assert flow_shift_count(s, T, susp) == k


def test_skew_product_with_unit_roofs_advances_time_by_one():
    ifs = const_ifs("1/2", "1/2")
    j = BernoulliSeq(ifs.probs, 1)
    p = FlowPoint(BernoulliSeq(ifs.probs, 2), LogTime(Fraction(1, 3)))
    j2, q = skew_product_step(j, p, Suspension(ifs))
    assert j2.prefix(10) == j.prefix(11)[1:]
    assert q.shifts == 1 and float(q.t) == pytest.approx(1 / 3)


@pytest.mark.parametrize("theta", [Fraction(0), Fraction(1, 2), Fraction(3, 4)])
def test_skew_product_iterates_agree_with_tau(theta):
    susp = Suspension(MIXED)
    for case in range(60):
        j = BernoulliSeq(MIXED.probs, (1, case))
        k = BernoulliSeq(MIXED.probs, (2, case))
        ell = 1 + case % 15
        p = FlowPoint(k, LogTime(theta))
        jj = j
        for _ in range(ell):
            jj, p = skew_product_step(jj, p, susp)
        assert p.shifts == stopping_time_tau(j, k, theta, ell, MIXED)
        direct = flow(FlowPoint(k, LogTime(theta)), LogTime(0, 1 / abs(lam(MIXED, j.prefix(ell), 1))), susp)
        assert direct.shifts == p.shifts and float(direct.t) == pytest.approx(float(p.t), abs=1e-12)


def test_rational_lock_fires_on_powers_of_two():
    lock = rational_lock(Suspension(bundle.get("ratlock")), 1)
    assert lock.locked and lock.lattice and lock.alpha_rational
    free = rational_lock(Suspension(bundle.get("mixed")), 1)
    assert not free.locked and not free.lattice
    assert not rational_lock(Suspension(bundle.get("ratlock")), math.pi, beta_is_rational=False).locked
    with pytest.raises(DomainError):
        rational_lock(Suspension(bundle.get("ratlock")), 0)


def test_spread_separates_locked_and_mixed_systems():
    locked = ergodicity_diagnostic(Suspension(bundle.get("ratlock")), 1, trials=16, horizon=100_000, seed=0)
    mixed = ergodicity_diagnostic(Suspension(bundle.get("mixed")), 1, trials=16, horizon=100_000, seed=0)
    assert locked.spread > 0.1 and locked.rational_lock
    assert mixed.spread < 0.05 and not mixed.rational_lock


def test_diagnostic_csv(tmp_path):
    rep = ergodicity_diagnostic(Suspension(bundle.get("mixed")), 1, trials=2, horizon=1000, seed=0)
    write_diagnostic_csv(tmp_path / "d.csv", [rep], config_hash="abc")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == ",".join(DIAGNOSTIC_HEADER) + ",config_hash"
    assert lines[1].endswith(",False,abc")


def test_equidistribution_self_similar():
    ifs = bundle.get("selfsim2")
    tr = equidistribution_trace(BernoulliSeq(ifs.probs, 0), 1, 3, 100_000, ifs)
    assert tr.visits == 100_000 and tr.tv_gap < 0.02 and tr.tv_to_bernoulli < 0.02
    assert tr.freq.sum() == pytest.approx(1)


def test_equidistribution_depth_zero_is_one_cell():
    ifs = bundle.get("selfsim2")
    tr = equidistribution_trace(BernoulliSeq(ifs.probs, 0), 1, 0, 100, ifs)
    assert tr.words == [()] and list(tr.freq) == [1.0]


def test_equidistribution_visits_every_heavy_cylinder():
    ifs = bundle.get("bm3")
    depth = 4
    tr = equidistribution_trace(BernoulliSeq(ifs.probs, 1), 3, depth, 100_000, ifs)
    heavy = tr.masses >= len(ifs) ** -depth
    assert heavy.any() and np.all(tr.freq[heavy] > 0)


def test_equidistribution_rejects_bad_N():
    ifs = bundle.get("selfsim2")
    with pytest.raises(DomainError):
        equidistribution_trace(BernoulliSeq(ifs.probs, 0), 0, 2, 10, ifs)


@pytest.mark.parametrize("name", ["mixed", "bm3"])
def test_flow_preserves_the_stationary_measure(name):
    susp = Suspension(bundle.get(name))
    before, after = flow_samples(susp, 0.7, 100_000, seed=3, steps=5)
    for c in range(2):
        assert wasserstein_distance(before[:, c], after[:, c]) <= 0.02
