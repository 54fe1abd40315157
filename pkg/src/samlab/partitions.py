"""Approximate squares, interior families, θ-rectangles and magnification.

An approximate square at level n around a sequence 𝚒 is the cylinder
[𝚒|_k] cut by a dyadic tube: k is the first depth at which one side of
the cylinder rectangle drops to 2^-n, and the tube (a dyadic interval of
length 2^-n containing Π(𝚒)) trims the other, longer side.  Joining with
all coarser levels keeps the squares nested in n.

Magnification samples μ̄ conditioned on a square.  Tubes are far thinner
than the attractor after pulling back through the cylinder map, so plain
rejection is hopeless at depth; :func:`conditional_sample` instead grows
the continuation word symbol by symbol, choosing each symbol in
proportion to its weight times the exact marginal mass of the pulled-back
strip and carrying importance weights for the remainder.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from typing import Sequence

import numpy as np

from .affine import DiagonalIFS, Rect, canonical_projection
from .measures import CylinderMeasure, SampleMeasure, sample
from .symbolic import DomainError, SymbolSeq, Word, as_fraction, stopping_time_tau

GEOMETRY_HEADER = ("n", "regime", "word_len", "tube_lo", "tube_hi", "width", "height")

# below this relative strip width float pull-backs lose too many digits
_MIN_RELATIVE_WIDTH = 2.0**-44


class MassTooSmallError(DomainError):
    def __init__(self, message: str, acceptance: float = 0.0, **diag):
        super().__init__(message)
        self.acceptance = acceptance
        self.diagnostics = diag


class PrecisionError(DomainError):
    """The requested conditioning is beyond double precision."""


Interval = tuple[Fraction, Fraction]


@dataclass(frozen=True)
class ApproxSquare:
    """E_n(𝚒) as a cylinder word plus the finest x- and y-tubes so far.

    Regime ``a`` means the cylinder's width reached 2^-n first and a
    y-tube cuts its height; regime ``b`` is the mirror case.  Ties go to
    ``a``.  Tubes are half-open intervals in the original coordinates.
    """

    n: int
    word: Word
    regime: str
    x_tube: Interval | None
    y_tube: Interval | None
    translation: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0))

    @property
    def tube_axis(self) -> int:
        return 2 if self.regime == "a" else 1

    @property
    def tube(self) -> Interval:
        return self.y_tube if self.regime == "a" else self.x_tube

    @property
    def clipped(self) -> bool:
        """Both a horizontal and a vertical tube cut the cylinder."""
        return self.x_tube is not None and self.y_tube is not None

    def cylinder(self, ifs: DiagonalIFS) -> Rect:
        return canonical_projection(self.word, ifs, ifs.bbox_rect)

    def rect(self, ifs: DiagonalIFS) -> Rect:
        """Bounding rectangle of Π(E_n(𝚒))."""
        c = self.cylinder(ifs)
        x0, x1, y0, y1 = c.x0, c.x1, c.y0, c.y1
        if self.x_tube is not None:
            x0, x1 = max(x0, self.x_tube[0]), min(x1, self.x_tube[1])
        if self.y_tube is not None:
            y0, y1 = max(y0, self.y_tube[0]), min(y1, self.y_tube[1])
        return Rect(x0, x1, y0, y1)

    def constraints(self) -> dict[int, Interval]:
        out = {}
        if self.x_tube is not None:
            out[1] = self.x_tube
        if self.y_tube is not None:
            out[2] = self.y_tube
        return out

    def within(self, other: "ApproxSquare") -> bool:
        """Symbolic inclusion E(self) ⊆ E(other), judged from the data."""
        if self.word[: len(other.word)] != other.word:
            return False
        for mine, theirs in ((self.x_tube, other.x_tube), (self.y_tube, other.y_tube)):
            if theirs is None:
                continue
            if mine is None or not (theirs[0] <= mine[0] and mine[1] <= theirs[1]):
                return False
        return True

    def geometry_row(self, ifs: DiagonalIFS) -> list:
        r = self.rect(ifs)
        lo, hi = self.tube
        return [self.n, self.regime, len(self.word), repr(float(lo)), repr(float(hi)),
                repr(float(r.width)), repr(float(r.height))]


def _dyadic_tube(value: Fraction, n: int, shift: Fraction) -> Interval:
    """The level-n dyadic interval containing ``value + shift``, pulled back by ``shift``."""
    k = math.floor((value + shift) * 2**n)
    lo = Fraction(k, 2**n) - shift
    return lo, lo + Fraction(1, 2**n)


def square_filtration(s: SymbolSeq, n_max: int, ifs: DiagonalIFS,
                      translation=(0, 0)) -> list[ApproxSquare]:
    """The squares E_1(𝚒), ..., E_{n_max}(𝚒) in one pass.

    ``translation`` shifts the dyadic grid (the random-translation device
    used to avoid atoms on cell boundaries).
    """
    if n_max < 1:
        raise DomainError("n must be at least 1")
    ifs.require_valid()
    shift = tuple(as_fraction(t) for t in translation)
    # squares far below double precision need Π(𝚒) exactly
    x, y = ifs.exact_point(s, n_max + 24)
    # cumulative |λ1|, |λ2| along the prefix, extended on demand
    lam1, lam2 = [Fraction(1)], [Fraction(1)]
    syms: list[int] = []

    def extend():
        sym = int(s[len(syms)])
        syms.append(sym)
        m = ifs.maps[sym]
        lam1.append(lam1[-1] * abs(m.l1))
        lam2.append(lam2[-1] * abs(m.l2))

    out: list[ApproxSquare] = []
    k1 = k2 = 0
    x_tube = y_tube = None
    for n in range(1, n_max + 1):
        thr = Fraction(1, 2**n)
        while True:
            if k1 >= len(lam1):
                extend()
            if lam1[k1] <= thr:
                break
            k1 += 1
        while True:
            if k2 >= len(lam2):
                extend()
            if lam2[k2] <= thr:
                break
            k2 += 1
        k = min(k1, k2)
        while len(syms) < k:
            extend()
        if lam2[k] >= lam1[k]:
            regime = "a"
            y_tube = _dyadic_tube(y, n, shift[1])
        else:
            regime = "b"
            x_tube = _dyadic_tube(x, n, shift[0])
        out.append(ApproxSquare(n, tuple(syms[:k]), regime, x_tube, y_tube, shift))
    return out


def approx_square(s: SymbolSeq, n: int, ifs: DiagonalIFS, global_translation=(0, 0)) -> ApproxSquare:
    return square_filtration(s, n, ifs, global_translation)[-1]


def write_geometry_csv(path, squares: Sequence[ApproxSquare], ifs: DiagonalIFS) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(GEOMETRY_HEADER)
        for sq in squares:
            wr.writerow(sq.geometry_row(ifs))


# ---------------------------------------------------------------------------
# interior families


def interior_family(sq: ApproxSquare, delta, ifs: DiagonalIFS, limit: int = 1 << 20) -> list[Word]:
    """Words 𝚓 with [𝚓] ⊆ E_n(𝚒) and |λ1(𝚓)| <= δ2^-n < |λ1(𝚓 minus its last symbol)|.

    Containment is certified by the cylinder rectangle φ_𝚓(B) lying in
    the square's tubes.
    """
    d = as_fraction(delta)
    if not 0 < d < 1:
        raise DomainError("delta must lie in (0, 1)")
    region = sq.rect(ifs)
    target = d / 2**sq.n
    if region.width < target:
        return []
    box = ifs.bbox_rect
    out: list[Word] = []
    w = sq.word
    l1w, l2w, (ox, oy) = ifs.word_map(w)
    parent_l1 = abs(l1w / ifs.maps[w[-1]].l1) if w else Fraction(2)
    if abs(l1w) <= target and parent_l1 <= target:
        return []
    stack = [(w, l1w, l2w, ox, oy)]
    while stack:
        word, l1, l2, px, py = stack.pop()
        r = _rect(l1, l2, px, py, box)
        if not _meets(r, region):
            continue
        if abs(l1) <= target:
            if region.contains(r):
                out.append(word)
            continue
        for i, m in enumerate(ifs.maps):
            stack.append((word + (i,), l1 * m.l1, l2 * m.l2, px + l1 * m.a[0], py + l2 * m.a[1]))
        if len(stack) + len(out) > limit:
            raise MemoryError("interior family exceeds the enumeration limit")
    out.sort()
    return out


def _rect(l1, l2, ox, oy, box: Rect) -> Rect:
    xs = sorted((l1 * box.x0 + ox, l1 * box.x1 + ox))
    ys = sorted((l2 * box.y0 + oy, l2 * box.y1 + oy))
    return Rect(xs[0], xs[1], ys[0], ys[1])


def _meets(a: Rect, b: Rect) -> bool:
    return a.x0 <= b.x1 and b.x0 <= a.x1 and a.y0 <= b.y1 and b.y0 <= a.y1


def interior_coverage(sq: ApproxSquare, delta, ifs: DiagonalIFS, samples: int = 4096, seed=0) -> float:
    """Monte Carlo estimate of μ̄(∪ E_n^δ)/μ̄(E_n(𝚒)).

    Continuations of the square's word are drawn from μ̄ conditioned on
    the square; the result is the fraction whose prefix is an interior
    word.
    """
    fam = set(interior_family(sq, delta, ifs))
    if not fam:
        return 0.0
    lengths = sorted({len(j) for j in fam})
    cond = conditional_sample(ifs, sq.word, sq.constraints(), samples, seed, keep_words=lengths[-1] - len(sq.word))
    hits = np.zeros(cond.count, dtype=bool)
    for L in lengths:
        extra = L - len(sq.word)
        for row, pre in enumerate(cond.words[:, :extra]):
            if not hits[row] and sq.word + tuple(int(v) for v in pre) in fam:
                hits[row] = True
    return float(hits.mean())


# ---------------------------------------------------------------------------
# conditional sampling of μ̄ on strips


@dataclass
class ConditionalSample:
    """Draws ζ-completions of continuations u with Π(w u ζ) in the strips.

    ``frac[axis]`` is the relative position inside the tube on a
    constrained axis; ``coord[axis]`` is φ_u(ζ) on a free axis (attractor
    coordinates, before applying φ_w).
    """

    count: int
    frac: dict[int, np.ndarray] = field(default_factory=dict)
    coord: dict[int, np.ndarray] = field(default_factory=dict)
    words: np.ndarray | None = None
    steps: int = 0
    resamples: int = 0
    acceptance: float = 1.0


def _pullback(ifs: DiagonalIFS, word: Word, axis: int, tube: Interval) -> tuple[float, float]:
    l1, l2, (ox, oy) = ifs.word_map(word)
    lam, off = (l1, ox) if axis == 1 else (l2, oy)
    a, b = (tube[0] - off) / lam, (tube[1] - off) / lam
    return (float(a), float(b)) if a <= b else (float(b), float(a))


class _Marginal:
    """Piecewise-linear CDF of μ pushed to one axis, from exact cell masses.

    ``mass(lo, hi)`` estimates μ(strip) and guides the sampler's proposal;
    a small Lebesgue component keeps every strip that meets the box
    reachable, so the proposal never excludes positive-mass symbols.
    """

    _MIX = 2.0**-16

    def __init__(self, ifs: DiagonalIFS, axis: int, cells: int = 12):
        box = ifs.bbox
        self.lo, self.hi = (box[0], box[1]) if axis == 1 else (box[2], box[3])
        self.width = self.hi - self.lo
        if self.width <= 0:
            self.edges = self.cdf = None
            return
        res = cells + max(0, math.ceil(-math.log2(self.width)))
        fn = (1.0, 0.0) if axis == 1 else (0.0, 1.0)
        while True:
            try:
                idx, mass = CylinderMeasure(ifs, res, functional=fn).cell_masses(res)
                break
            except MemoryError:
                if res <= 4:
                    raise
                res -= 2
        idx = idx[:, 0]
        first = int(idx.min())
        dense = np.zeros(int(idx.max()) - first + 1)
        np.add.at(dense, idx - first, mass)
        self.edges = (first + np.arange(len(dense) + 1)) / 2.0**res
        self.cdf = np.concatenate([[0.0], np.cumsum(dense)])
        self.cdf /= self.cdf[-1]

    def mass(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        if self.cdf is None:
            return ((lo <= self.lo) & (self.lo <= hi)).astype(float)
        f = np.interp(hi, self.edges, self.cdf) - np.interp(lo, self.edges, self.cdf)
        overlap = np.clip(np.minimum(hi, self.hi) - np.maximum(lo, self.lo), 0.0, None) / self.width
        return (1 - self._MIX) * f + self._MIX * overlap


@lru_cache(maxsize=64)
def _marginal(ifs: DiagonalIFS, axis: int) -> _Marginal:
    return _Marginal(ifs, axis)


def conditional_sample(ifs: DiagonalIFS, word: Word, constraints: dict[int, Interval], count: int,
                       seed, guard: int = 3, pool: np.ndarray | None = None,
                       keep_words: int = 0, max_steps: int = 4000) -> ConditionalSample:
    """Sample Π(w·u) with u ~ μ̄ conditioned on Π(w·u) ∈ tubes.

    A population of ``count`` particles extends u one symbol at a time,
    pulling the strips φ_{wu}^{-1}(tube) back as it goes.  The next
    symbol is drawn with probability proportional to p_s times the
    estimated μ-mass of the resulting strip, and particles are reweighted
    by the ratio of estimated masses (resampled systematically when the
    effective size halves).  A particle is settled once its strips
    contain the attractor's bounding box: from then on symbols follow p
    exactly.  Particles still unsettled ``4·guard`` steps after every
    strip is ``2^guard`` box widths wide are completed by rejection.
    """
    if count <= 0:
        raise DomainError("count must be positive")
    rng = np.random.default_rng(seed)
    box = ifs.bbox
    b_lo = {1: box[0], 2: box[2]}
    b_hi = {1: box[1], 2: box[3]}
    lam = {1: ifs.lam_array(1), 2: ifs.lam_array(2)}
    off = {1: ifs.offset_array(1), 2: ifs.offset_array(2)}
    cons = sorted(constraints)
    free = [a for a in (1, 2) if a not in constraints]
    marg = {a: _marginal(ifs, a) for a in cons}
    lo, hi = {}, {}
    for a in cons:
        p0, p1 = _pullback(ifs, word, a, constraints[a])
        span = b_hi[a] - b_lo[a]
        if span > 0 and (p1 - p0) < _MIN_RELATIVE_WIDTH * span:
            raise PrecisionError(
                f"strip on axis {a} is {(p1 - p0) / span:.3g} of the attractor width")
        if p1 < b_lo[a] or p0 > b_hi[a]:
            raise MassTooSmallError("tube misses the cylinder's attractor copy", 0.0, axis=a)
        lo[a] = np.full(count, p0)
        hi[a] = np.full(count, p1)
    # free axes: φ_u(ζ) = ou + lu·ζ
    ou = {a: np.zeros(count) for a in free}
    lu = {a: np.ones(count) for a in free}
    cdf = np.cumsum(ifs.probs)
    cdf[-1] = 1.0
    hist: list[np.ndarray] = []
    steps = resamples = 0
    k = len(cdf)
    rows = np.arange(count)

    def strip_mass(lo_, hi_):
        v = 1.0
        for a in cons:
            v = v * marg[a].mass(lo_[a], hi_[a])
        return v

    def settled():
        ok = np.ones(count, dtype=bool)
        for a in cons:
            ok &= (lo[a] <= b_lo[a]) & (hi[a] >= b_hi[a])
        return ok

    def wide():
        return all(np.all(hi[a] - lo[a] >= (b_hi[a] - b_lo[a]) * 2.0**guard) for a in cons)

    def reorder(src):
        nonlocal hist
        for a in cons:
            lo[a], hi[a] = lo[a][src], hi[a][src]
        for a in free:
            ou[a], lu[a] = ou[a][src], lu[a][src]
        hist = [h[src] for h in hist]

    logw = np.zeros(count)
    cur = strip_mass(lo, hi) if cons else np.ones(count)
    extra = 0
    while cons and not settled().all():
        if wide():
            extra += 1
            if extra > 4 * guard:
                break
        steps += 1
        if steps > max_steps:
            raise MassTooSmallError("splitting did not resolve the strip", 0.0, steps=steps)
        new_lo, new_hi = {}, {}
        for a in cons:
            u = (lo[a][:, None] - off[a][None, :]) / lam[a][None, :]
            v = (hi[a][:, None] - off[a][None, :]) / lam[a][None, :]
            new_lo[a], new_hi[a] = np.minimum(u, v), np.maximum(u, v)
        vm = strip_mass(new_lo, new_hi)
        pw = vm * ifs.probs[None, :]
        tot = pw.sum(axis=1)
        if not np.any(tot > 0):
            raise MassTooSmallError("all particles left the strip", 0.0, steps=steps)
        with np.errstate(divide="ignore"):
            logw = logw + np.log(tot) - np.log(cur)
        cum = np.cumsum(pw, axis=1)
        r = rng.random(count) * tot
        s = np.minimum((cum <= r[:, None]).sum(axis=1), k - 1)
        for a in cons:
            lo[a], hi[a] = new_lo[a][rows, s], new_hi[a][rows, s]
        cur = vm[rows, s]
        for a in free:
            ou[a] = ou[a] + lu[a] * off[a][s]
            lu[a] = lu[a] * lam[a][s]
        hist.append(s)
        w = np.exp(logw - logw.max())
        if w.sum() ** 2 / (w * w).sum() < count / 2:
            src = _systematic(w, rng)
            resamples += 1
            logw = np.zeros(count)
            cur = cur[src]
            reorder(src)
    if np.any(logw != logw.max()):
        src = _systematic(np.exp(logw - logw.max()), rng)
        resamples += 1
        reorder(src)
    words = np.stack(hist, axis=1) if hist else np.zeros((count, 0), dtype=np.int64)

    # completion: one ζ per particle, redrawn until it lands in the strip
    depth = max(1, int(math.ceil(44 / -math.log2(max(np.max(np.abs(lam[1])), np.max(np.abs(lam[2])))))))
    zeta = np.zeros((count, 2))
    zword = np.zeros((count, depth), dtype=np.int64)
    todo = np.arange(count)
    tried = 0
    for _ in range(4096):
        m = len(todo)
        if pool is not None:
            z = pool[rng.integers(len(pool), size=m)]
        else:
            zw = np.searchsorted(cdf, rng.random((m, depth)), side="right")
            z = _project(zw, lam, off)
        ok = np.ones(m, dtype=bool)
        for a in cons:
            ok &= (z[:, a - 1] >= lo[a][todo]) & (z[:, a - 1] < hi[a][todo])
        tried += m
        zeta[todo[ok]] = z[ok]
        if pool is None:
            zword[todo[ok]] = zw[ok]
        todo = todo[~ok]
        if not len(todo):
            break
        if tried >= 200 * count and (count - len(todo)) < 1e-4 * tried:
            raise MassTooSmallError("completion acceptance below 1e-4", (count - len(todo)) / tried,
                                    steps=steps)
    if len(todo):
        # give up on the stragglers; they carry negligible weight
        keep = np.setdiff1d(rows, todo)
        if not len(keep):
            raise MassTooSmallError("no completion landed in the strip", 0.0, steps=steps)
    else:
        keep = rows
    res = ConditionalSample(count=len(keep), steps=steps, resamples=resamples,
                            acceptance=count / tried)
    for a in cons:
        res.frac[a] = ((zeta[keep, a - 1] - lo[a][keep]) / (hi[a][keep] - lo[a][keep]))
    for a in free:
        res.coord[a] = ou[a][keep] + lu[a][keep] * zeta[keep, a - 1]
    if keep_words:
        res.words = np.concatenate([words[keep], zword[keep]], axis=1)[:, :keep_words]
    return res


def _systematic(w: np.ndarray, rng) -> np.ndarray:
    """Systematic resampling indices for weights ``w``."""
    c = np.cumsum(w)
    c /= c[-1]
    u = (rng.random() + np.arange(len(w))) / len(w)
    return np.minimum(np.searchsorted(c, u, side="right"), len(w) - 1)


def _project(words: np.ndarray, lam, off) -> np.ndarray:
    x = np.zeros(len(words))
    y = np.zeros(len(words))
    for k in range(words.shape[1] - 1, -1, -1):
        s = words[:, k]
        x = lam[1][s] * x + off[1][s]
        y = lam[2][s] * y + off[2][s]
    return np.column_stack([x, y])


# ---------------------------------------------------------------------------
# magnification


def magnify(sq: ApproxSquare, ifs: DiagonalIFS, samples: int = 4096, seed=0,
            method: str = "split", pool: SampleMeasure | None = None) -> SampleMeasure:
    """S_n Π μ̄_{E_n(𝚒)}, translated so the square's lower-left corner is 0.

    ``method="split"`` uses :func:`conditional_sample`; ``"rejection"``
    filters a μ-pool through φ_w and the tubes and fails with
    :class:`MassTooSmallError` when fewer than 1e-4 of the pool survive.
    """
    rect = sq.rect(ifs)
    corner = {1: rect.x0, 2: rect.y0}
    scale = 2**sq.n
    l1, l2, (ox, oy) = ifs.word_map(sq.word)
    lw, ow = {1: l1, 2: l2}, {1: ox, 2: oy}
    cons = sq.constraints()
    if method == "rejection":
        if pool is None:
            pool = sample(ifs, max(samples * 64, 1 << 16), seed)
        pts = pool.points
        img = np.column_stack([float(l1) * pts[:, 0] + float(ox), float(l2) * pts[:, 1] + float(oy)])
        ok = np.ones(len(img), dtype=bool)
        for a, (t0, t1) in cons.items():
            ok &= (img[:, a - 1] >= float(t0)) & (img[:, a - 1] < float(t1))
        acc = ok.mean()
        if acc < 1e-4 or not ok.any():
            raise MassTooSmallError("rejection acceptance below 1e-4", float(acc), n=sq.n)
        out = np.column_stack([(img[ok, a - 1] - float(corner[a])) * scale for a in (1, 2)])
        return SampleMeasure(out[:samples], None, seed)
    if method != "split":
        raise DomainError(f"unknown method {method!r}")
    cs = conditional_sample(ifs, sq.word, cons, samples, seed)
    cols = []
    for a in (1, 2):
        if a in cons:
            t0, t1 = cons[a]
            # tube edges relative to the corner are exact rationals
            cols.append(float((t0 - corner[a]) * scale) + cs.frac[a] * float((t1 - t0) * scale))
        else:
            v_c = (corner[a] - ow[a]) / lw[a]
            cols.append(float(lw[a] * scale) * (cs.coord[a] - float(v_c)))
    return SampleMeasure(np.column_stack(cols), None, seed)


# ---------------------------------------------------------------------------
# θ-rectangles


@dataclass(frozen=True)
class ThetaRect:
    j_word: Word
    k_word: Word
    theta: Fraction
    width: Fraction
    height: Fraction

    @property
    def eccentricity(self) -> float:
        return float(self.height / self.width)


def theta_rect(j: SymbolSeq, k: SymbolSeq, theta, ell: int, ifs: DiagonalIFS) -> ThetaRect:
    """[𝚓|_ℓ] × [𝚔|_τ_ℓ] and the side lengths of its image under Π̃."""
    th = as_fraction(theta)
    tau = stopping_time_tau(j, k, th, ell, ifs)
    jw, kw = j.prefix(ell), k.prefix(tau)
    l1, _, _ = ifs.word_map(jw)
    _, l2, _ = ifs.word_map(kw)
    return ThetaRect(jw, kw, th, abs(l1), abs(l2))
