from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import const_ifs, make_ifs
from samlab import bundle
from samlab.affine import (UNIT_SQUARE, DiagonalIFS, Rect, Regime, UndecidableError, ValidationError,
                           canonical_projection, eccentricity_trace, exponent_vector, factorize,
                           irrationality_condition, lyapunov, normalize, validate, _parallel)
from samlab.symbolic import BernoulliSeq, DomainError, PeriodicSeq, lam

TWO_MAP = make_ifs([("1/2", "1/3", ("-1/2", "-2/3")), ("1/2", "1/3", ("0", "1/3"))])


def test_validate_examples():
    rep = validate(TWO_MAP)
    assert rep.valid and rep.inside_unit_square
    x0, x1, y0, y1 = rep.bbox
    assert x0 == pytest.approx(-1) and x1 == pytest.approx(0)
    assert y0 == pytest.approx(-1) and y1 == pytest.approx(1 / 2)

    bad = make_ifs([("1", "1/2", ("0", "0")), ("1/2", "1/2", ("1/2", "0"))])
    rep = validate(bad)
    assert not rep.valid and rep.bad_index == 0

    rep = validate(make_ifs([("1/2", "1/2", ("0", "0"))] * 2, ["1/2", "1/3"]))
    assert not rep.valid and any("sum" in e for e in rep.errors)


def test_validate_zero_eigenvalue_and_require_valid():
    ifs = make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "0", ("1/2", "0"))])
    rep = validate(ifs)
    assert rep.bad_index == 1
    with pytest.raises(ValidationError):
        ifs.require_valid()


def test_construction_checks_shapes():
    with pytest.raises(ValidationError):
        make_ifs([("1/2", "1/2", ("0", "0"))])


def test_normalize_maps_attractor_into_square():
    big = make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "1/2", ("3", "5"))])
    assert not validate(big).inside_unit_square
    norm = normalize(big)
    rep = validate(norm)
    assert rep.inside_unit_square
    # conjugation keeps the linear parts
    assert [(m.l1, m.l2) for m in norm.maps] == [(m.l1, m.l2) for m in big.maps]


def test_json_round_trip(tmp_path):
    d = TWO_MAP.to_dict()
    p = tmp_path / "ifs.json"
    p.write_text(json.dumps(d))
    assert DiagonalIFS.from_json(p) == TWO_MAP
    assert DiagonalIFS.from_json(json.dumps(d)) == TWO_MAP


def test_canonical_projection_examples():
    assert canonical_projection((), TWO_MAP) == UNIT_SQUARE
    one = make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "1/2", ("1/2", "1/2"))])
    assert canonical_projection((0,), one) == Rect(Fraction(-1, 2), Fraction(1, 2), Fraction(-1, 2), Fraction(1, 2))
    r = canonical_projection((0, 1), TWO_MAP)
    assert r.width == 2 * Fraction(1, 4) and r.height == 2 * Fraction(1, 9)


@settings(max_examples=60)
@given(st.lists(st.integers(0, 2), max_size=10), st.lists(st.integers(0, 2), max_size=10))
def test_projection_nesting_and_multiplicativity(u, v):
    ifs = bundle.get("bm3")
    u, v = tuple(u), tuple(v)
    assert canonical_projection(u, ifs).contains(canonical_projection(u + v, ifs))
    for axis in (1, 2):
        assert lam(ifs, u + v, axis) == lam(ifs, u, axis) * lam(ifs, v, axis)


@settings(max_examples=40)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=10))
def test_aspect_ratio_matches_eccentricity(word):
    ifs = bundle.get("bm3")
    r = canonical_projection(tuple(word), ifs)
    s = PeriodicSeq(tuple(word), (0,))
    ecc = eccentricity_trace(s, len(word), ifs)[len(word)]
    assert math.log2(r.width / r.height) == pytest.approx(ecc, abs=1e-12)


def test_lyapunov_examples():
    ly = lyapunov(const_ifs("1/2", "1/2"))
    assert ly.lambda1_mu == pytest.approx(-1)
    ly = lyapunov(make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "1/8", ("1/2", "1/2"))]))
    assert ly.lambda2_mu == pytest.approx(-2)
    assert lyapunov(bundle.get("bm3")).regime == Regime.Y_DOMINANT
    assert lyapunov(bundle.get("eqlyap")).regime == Regime.EQUAL
    assert lyapunov(bundle.get("product")).regime == Regime.X_DOMINANT


def test_lyapunov_matches_empirical_average():
    ifs = make_ifs([("1/2", "1/3", ("0", "0")), ("1/5", "1/2", ("1/2", "1/2"))], ["1/4", "3/4"])
    ly = lyapunov(ifs)
    n = 10_000
    d = ifs.log2_abs(1)
    sd = math.sqrt(float(ifs.probs @ (d - ly.lambda1_mu) ** 2) / n)
    means = np.array([d[BernoulliSeq(ifs.probs, (3, k)).array(0, n)].mean() for k in range(100)])
    assert abs(means.mean() - ly.lambda1_mu) <= 3 * sd / math.sqrt(100)
    assert np.all(np.abs(means - ly.lambda1_mu) <= 5 * sd)


def test_factorize_and_exponents():
    assert factorize(360) == {2: 3, 3: 2, 5: 1}
    assert factorize(1) == {}
    big_prime = 2**61 - 1
    assert factorize(big_prime) == {big_prime: 1}
    assert exponent_vector(Fraction(2, 3)) == {2: 1, 3: -1}


def test_factorize_refuses_beyond_budget():
    with pytest.raises(UndecidableError):
        factorize(2**64 + 1)


def test_irrationality_examples():
    assert irrationality_condition(make_ifs([("1/2", "1/3", ("0", "0")), ("1/2", "1/3", ("1/2", "0"))])).satisfied
    powers = make_ifs([("1/2", "1/4", ("0", "0")), ("1/8", "1/2", ("1/2", "0"))])
    assert irrationality_condition(powers).status == "VIOLATED"
    thirds = make_ifs([("2/3", "4/9", ("0", "0")), ("4/9", "2/3", ("1/3", "0"))])
    assert irrationality_condition(thirds).status == "VIOLATED"


def test_irrationality_witness_is_genuine_and_search_symmetric():
    ifs = bundle.get("bm3")
    res = irrationality_condition(ifs)
    s, t, i, j = res.witness
    a = exponent_vector(abs(ifs.maps[i].lam(s)))
    b = exponent_vector(abs(ifs.maps[j].lam(t)))
    assert not _parallel(a, b)
    # relabelling the maps or swapping axes does not change the answer
    rev = DiagonalIFS(ifs.maps[::-1], ifs.weights[::-1])
    assert irrationality_condition(rev).satisfied
    assert irrationality_condition(ifs.transpose()).satisfied


@pytest.mark.parametrize("name, status", [
    ("selfsim2", "VIOLATED"), ("bm3", "SATISFIED"), ("column", "SATISFIED"), ("graph", "SATISFIED"),
    ("ratlock", "VIOLATED"), ("eqlyap", "VIOLATED"), ("product", "SATISFIED"), ("mixed", "SATISFIED"),
])
def test_bundled_irrationality(name, status):
    assert irrationality_condition(bundle.get(name)).status == status


def test_eccentricity_examples():
    s = BernoulliSeq([0.5, 0.5], 0)
    assert np.all(eccentricity_trace(s, 50, const_ifs("1/3", "1/3")) == 0)
    tr = eccentricity_trace(s, 50, const_ifs("1/2", "1/4"))
    assert np.allclose(tr, np.arange(51))


def test_eccentricity_recurrence_on_equal_exponents():
    ifs = bundle.get("eqlyap")
    tr = eccentricity_trace(BernoulliSeq(ifs.probs, 7), 1_000_000, ifs)
    early = np.mean(np.abs(tr[:1000]) <= 5)
    late = np.mean(np.abs(tr) <= 5)
    assert late < 0.1 < early


def test_exact_point_agrees_with_float_point():
    ifs = bundle.get("bm3")
    s = BernoulliSeq(ifs.probs, 11)
    x, y = ifs.exact_point(s, 60)
    fx, fy = ifs.point(s)
    assert float(x) == pytest.approx(fx, abs=1e-12) and float(y) == pytest.approx(fy, abs=1e-12)


def test_scale_y_and_transpose():
    ifs = bundle.get("bm3")
    sc = ifs.scale_y(Fraction(3))
    assert all(m.l2 == n.l2 and m.a[1] == 3 * n.a[1] for m, n in zip(sc.maps, ifs.maps))
    with pytest.raises(ValidationError):
        ifs.scale_y(0)
    tr = ifs.transpose()
    assert all(m.l1 == n.l2 and m.a == n.a[::-1] for m, n in zip(tr.maps, ifs.maps))
    with pytest.raises(DomainError):
        canonical_projection((5,), ifs)
