"""Diagonal affine iterated function systems.

All contraction ratios and translations are exact rationals.  This module
covers validation, the canonical projection of words to cylinder
rectangles, Lyapunov exponents with exact regime detection, the
multiplicative-independence test on contraction ratios, and the
eccentricity trace of a symbol sequence.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property, reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from .symbolic import BernoulliWeights, DomainError, SymbolSeq, Word, as_fraction


class ValidationError(ValueError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class UndecidableError(ArithmeticError):
    """Raised when a ratio is too large to factor within budget."""


@dataclass(frozen=True)
class DiagonalMap:
    """``(x, y) ↦ (l1·x + a[0], l2·y + a[1])``."""

    l1: Fraction
    l2: Fraction
    a: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0))

    def __post_init__(self):
        object.__setattr__(self, "l1", as_fraction(self.l1))
        object.__setattr__(self, "l2", as_fraction(self.l2))
        object.__setattr__(self, "a", tuple(as_fraction(v) for v in self.a))
        if len(self.a) != 2:
            raise ValueError("translation must have two coordinates")

    def lam(self, axis: int) -> Fraction:
        return self.l1 if axis == 1 else self.l2

    def __call__(self, x, y):
        return self.l1 * x + self.a[0], self.l2 * y + self.a[1]


@dataclass(frozen=True)
class Rect:
    x0: Fraction
    x1: Fraction
    y0: Fraction
    y1: Fraction

    @property
    def width(self) -> Fraction:
        return self.x1 - self.x0

    @property
    def height(self) -> Fraction:
        return self.y1 - self.y0

    def contains(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and other.x1 <= self.x1
                and self.y0 <= other.y0 and other.y1 <= self.y1)

    def interval(self, axis: int) -> tuple[Fraction, Fraction]:
        return (self.x0, self.x1) if axis == 1 else (self.y0, self.y1)


UNIT_SQUARE = Rect(Fraction(-1), Fraction(1), Fraction(-1), Fraction(1))


class Regime(str, Enum):
    X_DOMINANT = "X_DOMINANT"  # λ1^μ > λ2^μ: cylinders vertically flat
    Y_DOMINANT = "Y_DOMINANT"
    EQUAL = "EQUAL"


@dataclass(frozen=True)
class LyapunovExponents:
    lambda1_mu: float
    lambda2_mu: float
    regime: Regime


@dataclass
class ValidationReport:
    valid: bool
    errors: list[str] = field(default_factory=list)
    bad_index: int | None = None
    bbox: tuple[float, float, float, float] | None = None
    inside_unit_square: bool | None = None
    normalization: tuple[Fraction, Fraction, Fraction, Fraction] | None = None

    def raise_if_invalid(self):
        if not self.valid:
            raise ValidationError("; ".join(self.errors), self.bad_index)


class DiagonalIFS:
    """A finite family of diagonal affine maps with Bernoulli weights.

    Construction only checks shapes; contractivity and normalisation of
    the weights are reported by :func:`validate`, and enforced lazily by
    operations that need them through :meth:`require_valid`.
    """

    def __init__(self, maps: Sequence[DiagonalMap], weights: Sequence, name: str = ""):
        self.maps = tuple(maps)
        self.weights = tuple(as_fraction(w) for w in weights)
        self.name = name
        if len(self.maps) != len(self.weights):
            raise ValidationError("maps and weights differ in length")
        if len(self.maps) < 2:
            raise ValidationError("an IFS needs at least two maps")
        self._valid: bool | None = None

    def __len__(self) -> int:
        return len(self.maps)

    def __repr__(self):
        return f"DiagonalIFS({self.name or len(self.maps)})"

    def __eq__(self, other):
        return (isinstance(other, DiagonalIFS) and self.maps == other.maps
                and self.weights == other.weights)

    def __hash__(self):
        return hash((self.maps, self.weights))

    # -- serialisation -----------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, name: str = "") -> "DiagonalIFS":
        maps = [DiagonalMap(m["l1"], m["l2"], tuple(m.get("a", ("0", "0")))) for m in d["maps"]]
        return cls(maps, d["weights"], name=d.get("name", name))

    @classmethod
    def from_json(cls, path_or_text) -> "DiagonalIFS":
        p = Path(path_or_text) if not str(path_or_text).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else str(path_or_text)
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "maps": [{"l1": str(m.l1), "l2": str(m.l2), "a": [str(m.a[0]), str(m.a[1])]}
                     for m in self.maps],
            "weights": [str(w) for w in self.weights],
        }

    # -- derived data ------------------------------------------------------

    @cached_property
    def bernoulli(self) -> BernoulliWeights:
        return BernoulliWeights(self.weights)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights])

    def lam_array(self, axis: int) -> np.ndarray:
        return np.array([float(m.lam(axis)) for m in self.maps])

    def offset_array(self, axis: int) -> np.ndarray:
        return np.array([float(m.a[axis - 1]) for m in self.maps])

    def log2_abs(self, axis: int) -> np.ndarray:
        return np.log2(np.abs(self.lam_array(axis)))

    def transpose(self) -> "DiagonalIFS":
        """Swap the roles of the two coordinates."""
        maps = [DiagonalMap(m.l2, m.l1, (m.a[1], m.a[0])) for m in self.maps]
        return DiagonalIFS(maps, self.weights, name=(self.name + "^T") if self.name else "")

    def scale_y(self, c) -> "DiagonalIFS":
        """Conjugate by (x, y) ↦ (x, c·y); the measure is pushed forward accordingly."""
        c = as_fraction(c)
        if c == 0:
            raise ValidationError("scale must be nonzero")
        maps = [DiagonalMap(m.l1, m.l2, (m.a[0], c * m.a[1])) for m in self.maps]
        return DiagonalIFS(maps, self.weights, name=self.name)

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        return attractor_bbox(self)

    @cached_property
    def bbox_rect(self) -> Rect:
        return Rect(*exact_bbox(self))

    def require_valid(self) -> "DiagonalIFS":
        if self._valid is None:
            rep = validate(self)
            self._valid = rep.valid
            self._errors = rep
        if not self._valid:
            self._errors.raise_if_invalid()
        return self

    def word_map(self, word: Sequence[int]):
        """Exact ``(λ1(w), λ2(w), φ_w(0))``."""
        l1, l2 = Fraction(1), Fraction(1)
        ox, oy = Fraction(0), Fraction(0)
        for s in word:
            m = self.maps[s]
            ox += l1 * m.a[0]
            oy += l2 * m.a[1]
            l1 *= m.l1
            l2 *= m.l2
        return l1, l2, (ox, oy)

    def point(self, s: SymbolSeq | Sequence[int], depth: int | None = None) -> tuple[float, float]:
        """Float approximation of Π(s) truncated at ``depth`` symbols."""
        if depth is None:
            depth = truncation_depth(self)
        word = s.prefix(depth) if isinstance(s, SymbolSeq) else tuple(s)[:depth]
        x = y = 0.0
        for sym in reversed(word):
            m = self.maps[sym]
            x = float(m.l1) * x + float(m.a[0])
            y = float(m.l2) * y + float(m.a[1])
        return x, y

    def exact_point(self, s: SymbolSeq | Sequence[int], bits: int = 48) -> tuple[Fraction, Fraction]:
        """Rational point within 2^-bits (per coordinate, up to the box size) of Π(s)."""
        depth = truncation_depth(self, bits)
        word = s.prefix(depth) if isinstance(s, SymbolSeq) else tuple(s)[:depth]
        _, _, o = self.word_map(word)
        return o


def truncation_depth(ifs: DiagonalIFS, bits: int = 48) -> int:
    """Depth after which truncating Π changes points by < 2^-bits."""
    rho = max(max(abs(float(m.l1)), abs(float(m.l2))) for m in ifs.maps)
    if rho <= 0:
        return 1
    return max(1, int(math.ceil((bits + 2) / -math.log2(rho))))


def attractor_bbox(ifs: DiagonalIFS) -> tuple[float, float, float, float]:
    """Bounding box ``(x0, x1, y0, y1)`` of the attractor."""
    return tuple(float(v) for v in exact_bbox(ifs))


def exact_bbox(ifs: DiagonalIFS) -> tuple[Fraction, Fraction, Fraction, Fraction]:
    """Exact bounding box, as the fixed point of B ↦ hull(∪ φ_i(B)).

    Per axis the endpoints satisfy ``lo = min_i φ_i(lo or hi)`` and
    ``hi = max_i φ_i(hi or lo)``.  A float iteration proposes which map
    attains each extreme; the resulting 2x2 linear system is solved
    exactly and the choice is improved until it is self-consistent.
    """
    out: list[Fraction] = []
    for axis in (1, 2):
        lam = [m.lam(axis) for m in ifs.maps]
        off = [m.a[axis - 1] for m in ifs.maps]
        lo, hi = _float_hull(lam, off)
        lo_f, hi_f = Fraction(lo), Fraction(hi)
        for _ in range(64):
            i = min(range(len(lam)), key=lambda k: _img_lo(lam[k], off[k], lo_f, hi_f))
            j = max(range(len(lam)), key=lambda k: _img_hi(lam[k], off[k], lo_f, hi_f))
            lo_n, hi_n = _solve_hull(lam[i], off[i], lam[j], off[j])
            if (lo_n, hi_n) == (lo_f, hi_f):
                break
            lo_f, hi_f = lo_n, hi_n
        out.extend([lo_f, hi_f])
    return tuple(out)


def _img_lo(l, a, lo, hi):
    return l * lo + a if l > 0 else l * hi + a


def _img_hi(l, a, lo, hi):
    return l * hi + a if l > 0 else l * lo + a


def _solve_hull(li, ai, lj, aj):
    # lo = img_lo_i(lo, hi), hi = img_hi_j(lo, hi)
    if li > 0 and lj > 0:
        return ai / (1 - li), aj / (1 - lj)
    if li < 0 and lj < 0:
        # lo = li*hi + ai, hi = lj*lo + aj
        lo = (li * aj + ai) / (1 - li * lj)
        return lo, lj * lo + aj
    if li > 0:
        lo = ai / (1 - li)
        return lo, lj * lo + aj
    hi = aj / (1 - lj)
    return li * hi + ai, hi


def _float_hull(lam, off, tol: float = 2.0**-40):
    lam_a = np.array([float(v) for v in lam])
    off_a = np.array([float(v) for v in off])
    rho = float(np.max(np.abs(lam_a)))
    r = float(np.max(np.abs(off_a))) / (1 - rho) + 1.0
    lo, hi = -r, r
    for _ in range(100000):
        cands = np.concatenate([lam_a * lo + off_a, lam_a * hi + off_a])
        nlo, nhi = float(cands.min()), float(cands.max())
        done = abs(nlo - lo) < tol and abs(nhi - hi) < tol
        lo, hi = nlo, nhi
        if done:
            break
    return lo, hi


def validate(ifs: DiagonalIFS) -> ValidationReport:
    rep = ValidationReport(valid=True)
    for i, m in enumerate(ifs.maps):
        for name, v in (("l1", m.l1), ("l2", m.l2)):
            if v == 0:
                rep.errors.append(f"map {i}: {name} is zero")
            elif abs(v) >= 1:
                rep.errors.append(f"map {i}: {name}={v} is not a contraction")
        if rep.errors and rep.bad_index is None:
            rep.bad_index = i
    if any(w <= 0 for w in ifs.weights):
        rep.errors.append("weights must be positive")
    if sum(ifs.weights) != 1:
        rep.errors.append(f"weights sum to {sum(ifs.weights)}, not 1")
    rep.valid = not rep.errors
    if not rep.valid:
        return rep
    rep.bbox = attractor_bbox(ifs)
    x0, x1, y0, y1 = rep.bbox
    eps = 2.0**-40
    rep.inside_unit_square = x0 >= -1 - eps and x1 <= 1 + eps and y0 >= -1 - eps and y1 <= 1 + eps
    if not rep.inside_unit_square:
        rep.normalization = _normalizer(rep.bbox)
    return rep


def _normalizer(bbox):
    """Per-axis (centre, scale) rationals such that (v - c)/s maps the box into [-1, 1]."""
    x0, x1, y0, y1 = bbox
    out = []
    for lo, hi in ((x0, x1), (y0, y1)):
        c = Fraction((lo + hi) / 2).limit_denominator(2**20)
        half = max(hi - float(c), float(c) - lo)
        s = Fraction(2) ** max(0, math.ceil(math.log2(half * (1 + 2**-20)))) if half > 0 else Fraction(1)
        out.extend([c, s])
    return tuple(out)


def normalize(ifs: DiagonalIFS) -> DiagonalIFS:
    """Conjugate by a coordinate-wise affine map so the attractor lies in [-1,1]^2."""
    rep = validate(ifs)
    rep.raise_if_invalid()
    if rep.inside_unit_square:
        return ifs
    cx, sx, cy, sy = rep.normalization
    maps = [DiagonalMap(m.l1, m.l2, ((m.l1 * cx + m.a[0] - cx) / sx, (m.l2 * cy + m.a[1] - cy) / sy))
            for m in ifs.maps]
    return DiagonalIFS(maps, ifs.weights, name=ifs.name)


def canonical_projection(w: Sequence[int], ifs: DiagonalIFS, box: Rect = UNIT_SQUARE) -> Rect:
    """The rectangle φ_w(box) (``box`` defaults to [-1,1]^2)."""
    for s in w:
        if not 0 <= s < len(ifs):
            raise DomainError(f"symbol {s} outside alphabet")
    l1, l2, (ox, oy) = ifs.word_map(w)
    xs = sorted((l1 * box.x0 + ox, l1 * box.x1 + ox))
    ys = sorted((l2 * box.y0 + oy, l2 * box.y1 + oy))
    return Rect(xs[0], xs[1], ys[0], ys[1])


def lyapunov(ifs: DiagonalIFS) -> LyapunovExponents:
    """Lyapunov exponents in bits per symbol, with the regime decided exactly.

    The comparison Σ p_i log|λ1(i)| vs Σ p_i log|λ2(i)| is done on
    Π |λ_j(i)|^{p_i D} with D the common denominator of the weights.
    """
    ifs.require_valid()
    p = ifs.weights
    l1 = sum(float(pi) * math.log2(abs(m.l1)) for pi, m in zip(p, ifs.maps))
    l2 = sum(float(pi) * math.log2(abs(m.l2)) for pi, m in zip(p, ifs.maps))
    D = reduce(math.lcm, (pi.denominator for pi in p), 1)
    prod1 = prod2 = Fraction(1)
    for pi, m in zip(p, ifs.maps):
        e = int(pi * D)
        prod1 *= abs(m.l1) ** e
        prod2 *= abs(m.l2) ** e
    if prod1 > prod2:
        regime = Regime.X_DOMINANT
    elif prod2 > prod1:
        regime = Regime.Y_DOMINANT
    else:
        regime = Regime.EQUAL
    return LyapunovExponents(l1, l2, regime)


# ---------------------------------------------------------------------------
# multiplicative independence


_TRIAL_BOUND = 10**6
_MAX_ENTRY = 2**63


def _is_probable_prime(n: int) -> bool:
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    for p in small:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    # deterministic for n < 3.3e24
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def factorize(n: int) -> dict[int, int]:
    """Prime factorisation of ``1 <= n <= 2^63`` by trial division to 10^6.

    A leftover cofactor is accepted if it is provably prime; otherwise the
    factorisation is out of budget and :class:`UndecidableError` is raised.
    """
    if n < 1:
        raise DomainError("factorize needs a positive integer")
    if n > _MAX_ENTRY:
        raise UndecidableError(f"{n} exceeds the factorisation budget 2^63")
    out: dict[int, int] = {}
    for p in (2, 3):
        while n % p == 0:
            out[p] = out.get(p, 0) + 1
            n //= p
    p = 5
    while p * p <= n and p <= _TRIAL_BOUND:
        for q in (p, p + 2):
            while n % q == 0:
                out[q] = out.get(q, 0) + 1
                n //= q
        p += 6
    if n > 1:
        if n <= _TRIAL_BOUND**2 or _is_probable_prime(n):
            out[n] = out.get(n, 0) + 1
        else:
            raise UndecidableError(f"cofactor {n} not factored within trial bound")
    return out


def exponent_vector(r: Fraction) -> dict[int, int]:
    """Prime exponents of a positive rational: r = Π p^e_p."""
    r = abs(r)
    vec = dict(factorize(r.numerator))
    for p, e in factorize(r.denominator).items():
        vec[p] = vec.get(p, 0) - e
    return {p: e for p, e in vec.items() if e}


def _parallel(u: dict[int, int], v: dict[int, int]) -> bool:
    primes = sorted(set(u) | set(v))
    if not primes:
        return True
    ref = primes[0]
    for p in primes[1:]:
        if u.get(ref, 0) * v.get(p, 0) != u.get(p, 0) * v.get(ref, 0):
            return False
    return True


@dataclass(frozen=True)
class IrrationalityResult:
    satisfied: bool
    witness: tuple[int, int, int, int] | None = None  # (s, t, i, j)

    @property
    def status(self) -> str:
        return "SATISFIED" if self.satisfied else "VIOLATED"


def irrationality_condition(ifs: DiagonalIFS) -> IrrationalityResult:
    """Is some ``log|λ_s(i)| / log|λ_t(j)|`` irrational?

    Two ratios have a rational log-quotient exactly when their prime
    exponent vectors are parallel.
    """
    entries = []
    for i, m in enumerate(ifs.maps):
        for s in (1, 2):
            r = abs(m.lam(s))
            if r == 0 or r >= 1:
                raise DomainError(f"map {i}: |λ{s}| must lie in (0, 1)")
            entries.append((s, i, exponent_vector(r)))
    for s, i, u in entries:
        for t, j, v in entries:
            if not _parallel(u, v):
                return IrrationalityResult(True, (s, t, i, j))
    return IrrationalityResult(False)


def eccentricity_trace(s: SymbolSeq, n_max: int, ifs: DiagonalIFS) -> np.ndarray:
    """Entries ``log2|λ1(s|_k)| - log2|λ2(s|_k)|`` for k = 0..n_max."""
    d = ifs.log2_abs(1) - ifs.log2_abs(2)
    syms = s.array(0, n_max)
    return np.concatenate([[0.0], np.cumsum(d[syms])])
