from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from conftest import make_ifs
from samlab import bundle
from samlab.measures import SampleMeasure, sample, wasserstein1
from samlab.partitions import (GEOMETRY_HEADER, MassTooSmallError, approx_square, conditional_sample,
                               interior_coverage, interior_family, magnify, square_filtration, theta_rect,
                               write_geometry_csv)
from samlab.symbolic import BernoulliSeq, DomainError, stopping_time_kappa, stopping_time_t

DIAGONAL = make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "1/2", ("1/2", "1/2"))])
SHIFT = (Fraction(3, 7), Fraction(2, 9))


def test_self_similar_square_is_a_dyadic_cylinder():
    ifs = bundle.get("selfsim2")
    s = BernoulliSeq(ifs.probs, 4)
    for n in (1, 5, 9):
        sq = approx_square(s, n, ifs)
        assert sq.regime == "a" and len(sq.word) == n
        x, y = ifs.exact_point(s, n + 40)
        lo, hi = sq.y_tube
        assert hi - lo == Fraction(1, 2**n) and lo <= y < hi
        cyl = sq.cylinder(ifs)
        assert (cyl.y0, cyl.y1) == (lo, hi)


def test_square_with_weak_y_contraction():
    """λ1 ≡ 1/3 < λ2 ≡ 1/2: the cylinder width reaches 2^-n first and a y-tube cuts it."""
    ifs = bundle.get("bm3")
    s = BernoulliSeq(ifs.probs, 2)
    for n in (4, 8, 12):
        sq = approx_square(s, n, ifs)
        assert sq.regime == "a"
        assert len(sq.word) == stopping_time_kappa(s, n, ifs)
        assert sq.y_tube[1] - sq.y_tube[0] == Fraction(1, 2**n)


def test_square_with_weak_x_contraction_is_the_mirror():
    ifs = bundle.get("bm3").transpose()
    s = BernoulliSeq(ifs.probs, 2)
    for n in (4, 8, 12):
        sq = approx_square(s, n, ifs)
        assert sq.regime == "b"
        assert len(sq.word) == stopping_time_t(s, n, ifs)
        assert sq.x_tube[1] - sq.x_tube[0] == Fraction(1, 2**n)


def test_tube_contains_the_coded_point_under_translation():
    ifs = bundle.get("bm3")
    s = BernoulliSeq(ifs.probs, 9)
    x, y = ifs.exact_point(s, 100)
    for sq in square_filtration(s, 60, ifs, SHIFT):
        lo, hi = sq.tube
        v = y if sq.regime == "a" else x
        assert lo <= v < hi
        assert ((lo + SHIFT[1 if sq.regime == "a" else 0]) * 2**sq.n).denominator == 1


@pytest.mark.parametrize("name", ["bm3", "product", "eqlyap", "mixed", "selfsim2"])
def test_squares_are_nested(name):
    ifs = bundle.get(name)
    for seed in range(10):
        sq = square_filtration(BernoulliSeq(ifs.probs, seed), 20, ifs, SHIFT)
        assert all(b.within(a) for a, b in zip(sq, sq[1:]))


@pytest.mark.parametrize("name", ["bm3", "product", "mixed"])
def test_square_geometry(name):
    ifs = bundle.get(name)
    x0, x1, y0, y1 = ifs.bbox
    scale = max(x1 - x0, y1 - y0)
    lmin = {a: min(abs(m.lam(a)) for m in ifs.maps) for a in (1, 2)}
    for seed in range(10):
        for sq in square_filtration(BernoulliSeq(ifs.probs, seed), 20, ifs):
            r = sq.rect(ifs)
            bound = Fraction(1, 2**sq.n)
            assert r.width <= bound * scale + 1e-15 and r.height <= bound * scale + 1e-15
            l1, l2, _ = ifs.word_map(sq.word)
            side, a = (abs(l1), 1) if sq.regime == "a" else (abs(l2), 2)
            assert bound >= side > bound * lmin[a] or (sq.n > 1 and sq.clipped)


def test_equal_exponent_system_gets_clipped_squares():
    ifs = bundle.get("eqlyap")
    sq = square_filtration(BernoulliSeq(ifs.probs, 0), 40, ifs)
    assert any(s.clipped for s in sq)


def test_geometry_csv(tmp_path):
    ifs = bundle.get("bm3")
    sq = square_filtration(BernoulliSeq(ifs.probs, 0), 5, ifs)
    write_geometry_csv(tmp_path / "g.csv", sq, ifs)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == ",".join(GEOMETRY_HEADER) and len(lines) == 6


def test_square_level_must_be_positive():
    ifs = bundle.get("bm3")
    with pytest.raises(DomainError):
        approx_square(BernoulliSeq(ifs.probs, 0), 0, ifs)


# -- interior families --------------------------------------------------------


def test_interior_family_empty_when_square_too_narrow():
    ifs = bundle.get("bm3")
    sq = approx_square(BernoulliSeq(ifs.probs, 0), 6, ifs)
    rel = sq.rect(ifs).width * 2**6
    assert rel < 1
    assert interior_family(sq, (rel + 1) / 2, ifs) == []


def test_interior_family_of_aligned_cylinder():
    n = 5
    sq = approx_square(BernoulliSeq(DIAGONAL.probs, 1), n, DIAGONAL)
    fam = interior_family(sq, Fraction(1, 4), DIAGONAL)
    assert len(fam) == 4
    assert all(len(w) == n + 2 and w[:n] == sq.word for w in fam)


def test_interior_family_rejects_bad_delta():
    sq = approx_square(BernoulliSeq(DIAGONAL.probs, 1), 3, DIAGONAL)
    with pytest.raises(DomainError):
        interior_family(sq, 1, DIAGONAL)


@pytest.mark.parametrize("name, transpose", [("bm3", True), ("product", False)])
def test_interior_coverage_grows_as_delta_shrinks(name, transpose):
    ifs = bundle.get(name)
    ifs = ifs.transpose() if transpose else ifs
    cov = {}
    for d in (Fraction(1, 4), Fraction(1, 16)):
        cov[d] = [interior_coverage(approx_square(BernoulliSeq(ifs.probs, k), 10, ifs, SHIFT), d, ifs, 1024, seed=k)
                  for k in range(12)]
    assert np.median(cov[Fraction(1, 16)]) >= 0.85
    assert np.mean(cov[Fraction(1, 16)]) > np.mean(cov[Fraction(1, 4)])


# -- conditional sampling and magnification -------------------------------------


@pytest.mark.parametrize("name, n", [("bm3", 10), ("product", 16), ("eqlyap", 12), ("bm3", 40)])
def test_conditional_samples_respect_the_square(name, n):
    ifs = bundle.get(name)
    sq = approx_square(BernoulliSeq(ifs.probs, 5), n, ifs, SHIFT)
    cs = conditional_sample(ifs, sq.word, sq.constraints(), 512, 0)
    assert cs.count == 512
    for a, (lo, hi) in sq.constraints().items():
        assert np.all((cs.frac[a] >= 0) & (cs.frac[a] < 1))


def test_magnified_self_similar_square_is_mu():
    ifs = bundle.get("selfsim2")
    sq = approx_square(BernoulliSeq(ifs.probs, 4), 6, ifs)
    mag = magnify(sq, ifs, 4096, seed=1)
    assert mag.points.min() >= 0 and mag.points.max() <= 1
    assert wasserstein1(mag, sample(ifs, 4096, 2), max_points=4096) <= 0.02


def test_magnified_diagonal_square_is_the_diagonal_measure():
    sq = approx_square(BernoulliSeq(DIAGONAL.probs, 2), 7, DIAGONAL)
    mag = magnify(sq, DIAGONAL, 2048, seed=3)
    assert np.allclose(mag.points[:, 0], mag.points[:, 1], atol=1e-9)
    assert wasserstein1(mag, sample(DIAGONAL, 2048, 4)) <= 0.03


def test_magnified_column_is_a_vertical_segment():
    ifs = bundle.get("column")
    sq = approx_square(BernoulliSeq(ifs.probs, 1), 8, ifs)
    mag = magnify(sq, ifs, 1024, seed=0)
    assert np.ptp(mag.points[:, 0]) < 1e-9 and np.ptp(mag.points[:, 1]) > 0.1


def test_split_and_rejection_magnifications_agree():
    ifs = bundle.get("bm3")
    sq = approx_square(BernoulliSeq(ifs.probs, 3), 5, ifs)
    a = magnify(sq, ifs, 4096, seed=1)
    b = magnify(sq, ifs, 4096, seed=2, method="rejection")
    assert wasserstein1(a, b, max_points=4096) <= 0.02


def test_rejection_fails_loudly_on_deep_squares():
    ifs = bundle.get("bm3")
    # the tube is about 2^-20 of the cylinder height at n = 60
    sq = approx_square(BernoulliSeq(ifs.probs, 3), 60, ifs)
    with pytest.raises(MassTooSmallError) as exc:
        magnify(sq, ifs, 64, seed=0, method="rejection", pool=sample(ifs, 1 << 16, 0))
    assert exc.value.acceptance < 1e-4 and exc.value.diagnostics["n"] == 60
    # the exact sampler still handles it
    assert magnify(sq, ifs, 64, seed=0).points.shape == (64, 2)


def test_magnify_is_deterministic():
    ifs = bundle.get("mixed")
    sq = approx_square(BernoulliSeq(ifs.probs, 3), 12, ifs, SHIFT)
    assert np.array_equal(magnify(sq, ifs, 256, seed=9).points, magnify(sq, ifs, 256, seed=9).points)


# -- theta rectangles ---------------------------------------------------------


@pytest.mark.parametrize("name", ["bm3", "product", "mixed", "eqlyap"])
def test_theta_rect_eccentricity(name):
    ifs = bundle.get(name)
    lmin = min(abs(m.l2) for m in ifs.maps)
    rng = np.random.default_rng(0)
    for t in range(50):
        th = Fraction(int(rng.integers(0, 16)), 4)
        ell = int(rng.integers(1, 15))
        r = theta_rect(BernoulliSeq(ifs.probs, (t, 0)), BernoulliSeq(ifs.probs, (t, 1)), th, ell, ifs)
        ratio = r.height / r.width
        # τ is the last depth with height >= 2^-θ width
        assert float(ratio) >= 2.0 ** -float(th) * (1 - 1e-12)
        assert float(ratio) < 2.0 ** -float(th) / float(lmin) * (1 + 1e-12)


def test_theta_rect_delegates_to_tau():
    from conftest import const_ifs
    cases = [("1/4", "1/2", 0, 3, 6), ("1/2", "1/2", 1, 5, 6), ("1/3", "1/2", 2, 4, 8)]
    for l1, l2, th, ell, tau in cases:
        ifs = const_ifs(l1, l2)
        r = theta_rect(BernoulliSeq(ifs.probs, 0), BernoulliSeq(ifs.probs, 1), th, ell, ifs)
        assert len(r.j_word) == ell and len(r.k_word) == tau
