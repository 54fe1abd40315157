"""Symbol space machinery: words, cylinders, shifts, Bernoulli weights and
the stopping times used by the approximate-square filtrations.

Words are plain tuples of alphabet indices.  Infinite sequences are
:class:`SymbolSeq` objects that hand out prefixes on demand; two concrete
kinds exist: exact eventually-periodic sequences and lazily sampled
Bernoulli sequences driven by a seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np

Word = tuple[int, ...]

_BLOCK = 4096
# shifts with denominators above this are compared with mpmath instead of
# exact powers
_EXACT_DENOMINATOR = 256


class DomainError(ValueError):
    """Raised when an argument lies outside an operation's domain."""


def as_fraction(value) -> Fraction:
    """Parse ints, floats, Fractions and ``"p/q"`` strings exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value))
    raise TypeError(f"cannot interpret {value!r} as a rational")


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise DomainError("alphabet needs at least two symbols")

    def check(self, word: Sequence[int]) -> Word:
        w = tuple(int(s) for s in word)
        for s in w:
            if not 0 <= s < self.size:
                raise DomainError(f"symbol {s} outside alphabet of size {self.size}")
        return w


@dataclass(frozen=True)
class BernoulliWeights:
    """Exact probability vector; construction fails unless it sums to one."""

    p: tuple[Fraction, ...]

    def __post_init__(self):
        p = tuple(as_fraction(x) for x in self.p)
        object.__setattr__(self, "p", p)
        if len(p) < 2:
            raise DomainError("need at least two weights")
        if any(x <= 0 for x in p):
            raise DomainError("weights must be positive")
        if sum(p) != 1:
            raise DomainError(f"weights sum to {sum(p)}, not 1")

    @classmethod
    def uniform(cls, size: int) -> "BernoulliWeights":
        return cls(tuple(Fraction(1, size) for _ in range(size)))

    def __len__(self) -> int:
        return len(self.p)

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(x) for x in self.p])


def cylinder_mass(w: Sequence[int], weights: BernoulliWeights) -> Fraction:
    """Bernoulli mass of the cylinder ``[w]``; the empty word has mass 1."""
    mass = Fraction(1)
    n = len(weights.p)
    for s in w:
        if not 0 <= s < n:
            raise DomainError(f"symbol {s} outside alphabet of size {n}")
        mass *= weights.p[s]
    return mass


# ---------------------------------------------------------------------------
# infinite sequences


class SymbolSeq:
    """An element of the one-sided shift space, read through prefixes."""

    def __getitem__(self, k: int) -> int:
        return int(self.array(k, k + 1)[0])

    def array(self, start: int, stop: int) -> np.ndarray:
        raise NotImplementedError

    def prefix(self, n: int) -> Word:
        if n < 0:
            raise DomainError("prefix length must be nonnegative")
        return tuple(int(s) for s in self.array(0, n))

    def shift(self, k: int) -> "SymbolSeq":
        raise NotImplementedError


@dataclass(frozen=True)
class PeriodicSeq(SymbolSeq):
    """The sequence ``preperiod · period · period · ...``."""

    preperiod: Word
    period: Word

    def __post_init__(self):
        object.__setattr__(self, "preperiod", tuple(int(s) for s in self.preperiod))
        object.__setattr__(self, "period", tuple(int(s) for s in self.period))
        if not self.period:
            raise DomainError("period must be nonempty")

    @property
    def is_pure(self) -> bool:
        return not self.preperiod

    def array(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.zeros(0, dtype=np.int64)
        pre, per = self.preperiod, self.period
        idx = np.arange(start, stop)
        out = np.empty(len(idx), dtype=np.int64)
        head = idx < len(pre)
        if head.any():
            out[head] = np.asarray(pre, dtype=np.int64)[idx[head]]
        tail = ~head
        if tail.any():
            out[tail] = np.asarray(per, dtype=np.int64)[(idx[tail] - len(pre)) % len(per)]
        return out

    def shift(self, k: int) -> "PeriodicSeq":
        if k < 0:
            raise DomainError("shift must be nonnegative")
        if k <= len(self.preperiod):
            return PeriodicSeq(self.preperiod[k:], self.period)
        r = (k - len(self.preperiod)) % len(self.period)
        return PeriodicSeq((), self.period[r:] + self.period[:r])


class BernoulliSeq(SymbolSeq):
    """A μ̄-typical sequence, generated lazily in seeded blocks.

    Block ``b`` is drawn from ``default_rng([*seed, b])`` so any prefix is
    reproducible regardless of the order in which symbols are requested.
    """

    def __init__(self, probs, seed, offset: int = 0, _cache: dict | None = None):
        self.probs = np.asarray([float(x) for x in probs], dtype=float)
        self.seed = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
        self.offset = int(offset)
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0
        self._cache = {} if _cache is None else _cache

    def _block(self, b: int) -> np.ndarray:
        blk = self._cache.get(b)
        if blk is None:
            rng = np.random.default_rng([*self.seed, b])
            u = rng.random(_BLOCK)
            blk = np.searchsorted(self._cdf, u, side="right").astype(np.int64)
            self._cache[b] = blk
        return blk

    def array(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.zeros(0, dtype=np.int64)
        a, b = start + self.offset, stop + self.offset
        blocks = [self._block(j) for j in range(a // _BLOCK, (b - 1) // _BLOCK + 1)]
        joined = np.concatenate(blocks)
        base = (a // _BLOCK) * _BLOCK
        return joined[a - base : b - base]

    def shift(self, k: int) -> "BernoulliSeq":
        if k < 0:
            raise DomainError("shift must be nonnegative")
        return BernoulliSeq(self.probs, self.seed, self.offset + k, self._cache)

    def __repr__(self):
        return f"BernoulliSeq(seed={self.seed}, offset={self.offset})"


class PrefixedSeq(SymbolSeq):
    """A finite word followed by another sequence."""

    def __init__(self, head: Sequence[int], tail: SymbolSeq):
        self.head = tuple(int(s) for s in head)
        self.tail = tail

    def array(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.zeros(0, dtype=np.int64)
        h = len(self.head)
        parts = []
        if start < h:
            parts.append(np.asarray(self.head[start:min(stop, h)], dtype=np.int64))
        if stop > h:
            parts.append(self.tail.array(max(start, h) - h, stop - h))
        return np.concatenate(parts)

    def shift(self, k: int) -> SymbolSeq:
        if k < 0:
            raise DomainError("shift must be nonnegative")
        if k < len(self.head):
            return PrefixedSeq(self.head[k:], self.tail)
        return self.tail.shift(k - len(self.head))


def shift(s: SymbolSeq, k: int) -> SymbolSeq:
    """σ^k; the result's n-th symbol is s's (n+k)-th."""
    if k == 0:
        return s
    return s.shift(k)


# ---------------------------------------------------------------------------
# exact comparisons of products of contraction ratios


def _ratio(ifs, axis: int, symbol: int) -> Fraction:
    m = ifs.maps[symbol]
    return abs(m.l1 if axis == 1 else m.l2)


def log2_sign(offset, ratio: Fraction) -> int:
    """Sign of ``offset + log2(ratio)`` for a positive rational ``ratio``.

    Exact when ``offset`` is rational with a small denominator; otherwise
    decided with 60-digit arithmetic.
    """
    if ratio <= 0:
        raise DomainError("ratio must be positive")
    off = as_fraction(offset)
    p, q = off.numerator, off.denominator
    if q <= _EXACT_DENOMINATOR:
        # sign(p/q + log2 r) = sign(r^q 2^p - 1)
        lhs = ratio**q * (Fraction(2) ** p)
        return (lhs > 1) - (lhs < 1)
    with mpmath.workdps(60):
        v = mpmath.mpf(p) / q + mpmath.log(mpmath.mpf(ratio.numerator) / ratio.denominator, 2)
        return int(mpmath.sign(v))


def stopping_time_t(s: SymbolSeq, n: int, ifs, axis: int = 2) -> int:
    """Least k with ``|λ_axis(s|_k)| <= 2^-n`` (axis 2 by default)."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    return _first_below(s, ifs, axis, Fraction(1, 2**n))


def stopping_time_kappa(j: SymbolSeq, ell: int, ifs) -> int:
    """Least n with ``|λ1(j|_n)| <= 2^-ell``."""
    if ell < 0:
        raise DomainError("ell must be nonnegative")
    return _first_below(j, ifs, 1, Fraction(1, 2**ell))


def _first_below(s: SymbolSeq, ifs, axis: int, threshold: Fraction) -> int:
    num, den = 1, 1
    tn, td = threshold.numerator, threshold.denominator
    k = 0
    chunk = 64
    while True:
        if num * td <= tn * den:
            return k
        for sym in s.array(k, k + chunk):
            r = _ratio(ifs, axis, int(sym))
            num *= r.numerator
            den *= r.denominator
            k += 1
            if num * td <= tn * den:
                return k
        if k > 10**7:
            raise DomainError("stopping time did not terminate; is the map contracting?")


def stopping_time_tau(j: SymbolSeq, k: SymbolSeq, theta, ell: int, ifs) -> int:
    """``max{n : |λ2(k|_n)| >= 2^-θ |λ1(j|_ell)|}``."""
    if ell < 0:
        raise DomainError("ell must be nonnegative")
    th = as_fraction(theta)
    if th < 0:
        raise DomainError("theta must be nonnegative")
    width = Fraction(1)
    for sym in j.array(0, ell):
        width *= _ratio(ifs, 1, int(sym))
    return _last_above(k, ifs, 2, th, width)


def _last_above(k: SymbolSeq, ifs, axis: int, theta: Fraction, scale: Fraction) -> int:
    """max n with ``|λ_axis(k|_n)| >= 2^-θ · scale``, i.e. θ + log2(|λ(k|_n)|/scale) >= 0."""
    ratio = 1 / scale
    n = 0
    pos = 0
    while True:
        for sym in k.array(pos, pos + 64):
            nxt = ratio * _ratio(ifs, axis, int(sym))
            if log2_sign(theta, nxt) < 0:
                return n
            ratio = nxt
            n += 1
        pos += 64
        if n > 10**6:
            raise DomainError("stopping time did not terminate")


def lam(ifs, word: Sequence[int], axis: int) -> Fraction:
    """Signed product ``λ_axis(word)``."""
    out = Fraction(1)
    for s in word:
        m = ifs.maps[s]
        out *= m.l1 if axis == 1 else m.l2
    return out
