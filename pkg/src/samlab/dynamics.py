"""Suspension semi-flows over the shift and their diagnostics.

A point of the suspension is (𝚒, t) with 0 <= t < roof(𝚒), where the
roof is -log2|λ_r(i_0)| for one of the two axes r; reaching the roof
identifies (𝚒, roof) with (σ𝚒, 0).  Times are kept exactly as
``shift + log2(ratio)`` with rational shift and ratio, so the number of
roof crossings agrees exactly with the symbolic stopping times.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product as iproduct

import numpy as np

from .affine import DiagonalIFS, exponent_vector, _parallel
from .symbolic import (BernoulliSeq, DomainError, PeriodicSeq, SymbolSeq, as_fraction, log2_sign,
                       shift)

DIAGNOSTIC_HEADER = ("beta", "trials", "horizon", "spread", "rational_lock")
ROOFS = {"NEG_LOG_LAMBDA1": 1, "NEG_LOG_LAMBDA2": 2}


@dataclass(frozen=True)
class LogTime:
    """The real number ``shift + log2(ratio)``."""

    shift: Fraction = Fraction(0)
    ratio: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "shift", as_fraction(self.shift))
        object.__setattr__(self, "ratio", as_fraction(self.ratio))
        if self.ratio <= 0:
            raise DomainError("ratio must be positive")

    def __float__(self) -> float:
        return float(self.shift) + math.log2(self.ratio.numerator) - math.log2(self.ratio.denominator)

    def __add__(self, other) -> "LogTime":
        if isinstance(other, LogTime):
            return LogTime(self.shift + other.shift, self.ratio * other.ratio)
        return LogTime(self.shift + as_fraction(other), self.ratio)

    def sign(self) -> int:
        return log2_sign(self.shift, self.ratio)

    def minus_log2(self, r: Fraction) -> "LogTime":
        """``self + log2(r)``: subtract a roof value -log2 r."""
        return LogTime(self.shift, self.ratio * r)


@dataclass(frozen=True)
class Suspension:
    ifs: DiagonalIFS
    roof: str = "NEG_LOG_LAMBDA2"

    def __post_init__(self):
        if self.roof not in ROOFS:
            raise DomainError(f"roof must be one of {sorted(ROOFS)}")
        self.ifs.require_valid()

    @property
    def axis(self) -> int:
        return ROOFS[self.roof]

    def ratio(self, symbol: int) -> Fraction:
        return abs(self.ifs.maps[symbol].lam(self.axis))

    def roof_values(self) -> np.ndarray:
        return -self.ifs.log2_abs(self.axis)

    def roof_of(self, s: SymbolSeq) -> float:
        return float(self.roof_values()[s[0]])


@dataclass(frozen=True)
class FlowPoint:
    seq: SymbolSeq
    t: LogTime = LogTime()
    shifts: int = 0  # roof crossings since the orbit started

    @property
    def time(self) -> float:
        return float(self.t)


def _as_logtime(s) -> LogTime:
    return s if isinstance(s, LogTime) else LogTime(as_fraction(s))


def flow(p: FlowPoint, s, susp: Suspension) -> FlowPoint:
    """𝒯_s(𝚒, t) with the roof identifications applied eagerly."""
    st = _as_logtime(s)
    if st.sign() < 0:
        raise DomainError("flow time must be nonnegative")
    total = p.t + st
    seq = p.seq
    n = 0
    while True:
        # crossing the roof: total >= roof(i_0) ⟺ total + log2|λ(i_0)| >= 0
        nxt = total.minus_log2(susp.ratio(int(seq[0])))
        if nxt.sign() < 0:
            break
        total = nxt
        seq = shift(seq, 1)
        n += 1
    return FlowPoint(seq, total, p.shifts + n)


def flow_shift_count(s: SymbolSeq, time, susp: Suspension) -> int:
    """Number of roof crossings of the orbit of (𝚒, 0) up to ``time``."""
    return flow(FlowPoint(s), time, susp).shifts


def period_of(s: SymbolSeq, susp: Suspension) -> float:
    """Return period of ((i,i,...), 0)-type points: the roof summed over one period."""
    return float(period_logtime(s, susp))


def period_logtime(s: SymbolSeq, susp: Suspension) -> LogTime:
    if not isinstance(s, PeriodicSeq) or not s.is_pure:
        raise DomainError("period_of needs a purely periodic sequence")
    r = Fraction(1)
    for sym in s.period:
        r *= susp.ratio(sym)
    return LogTime(0, 1 / r)


def skew_product_step(j: SymbolSeq, p: FlowPoint, susp_z: Suspension, ifs: DiagonalIFS | None = None):
    """σ*: (𝚓, (𝚔, t)) ↦ (σ𝚓, (𝚔, t - log2|λ1(j_0)|)); fibre flow uses ``susp_z``."""
    base = ifs if ifs is not None else susp_z.ifs
    r = abs(base.maps[int(j[0])].l1)
    return shift(j, 1), flow(p, LogTime(0, 1 / r), susp_z)


# ---------------------------------------------------------------------------
# exact rational-lock pre-check


@dataclass(frozen=True)
class LockCheck:
    """Does the time-β map have an obvious eigenfunction?

    The roofs -log2|λ(i)| lie in a common lattice αℤ exactly when all
    |λ(i)| are integer powers of one rational b, with α = -log2 b.  Two
    readings of the non-ergodicity condition are reported: β/α ∈ ℚ and
    β·α ∈ ℚ.
    """

    lattice: bool
    alpha_rational: bool
    beta_rational: bool
    lock_ratio: bool   # β/α rational
    lock_product: bool  # β·α rational

    @property
    def locked(self) -> bool:
        return self.lock_ratio or self.lock_product


def rational_lock(susp: Suspension, beta, beta_is_rational: bool = True) -> LockCheck:
    """Exact lock test.  Every int, Fraction, "p/q" string or float is a
    rational number; pass ``beta_is_rational=False`` to describe an
    irrational β (e.g. one only known through a float approximation)."""
    if float(as_fraction(beta) if isinstance(beta, str) else beta) <= 0:
        raise DomainError("beta must be positive")
    beta_rat = bool(beta_is_rational)
    vecs = [exponent_vector(susp.ratio(i)) for i in range(len(susp.ifs))]
    lattice = all(_parallel(vecs[0], v) for v in vecs[1:])
    alpha_rat = False
    if lattice:
        # α is a rational multiple of log2 of a single ratio; it is
        # rational iff that ratio is a power of two
        alpha_rat = all(set(v) <= {2} for v in vecs)
    lock = lattice and alpha_rat and beta_rat
    return LockCheck(lattice, alpha_rat, beta_rat, lock, lock)


# ---------------------------------------------------------------------------
# Birkhoff averages along time-β orbits


@dataclass
class DiagnosticReport:
    beta: float
    trials: int
    horizon: int
    spread: float
    rational_lock: bool
    lock: LockCheck | None = None
    per_function: np.ndarray | None = None

    def row(self) -> list:
        return [repr(float(self.beta)), self.trials, self.horizon, repr(float(self.spread)),
                str(bool(self.rational_lock))]


def _bumps(u: np.ndarray) -> np.ndarray:
    """Four smooth windows on [0, 1): sin² bumps supported on quarters."""
    out = np.zeros((4, len(u)))
    for b in range(4):
        v = 4 * u - b
        inside = (v >= 0) & (v < 1)
        out[b, inside] = np.sin(np.pi * v[inside]) ** 2
    return out


def _cylinder_codes(sym: np.ndarray, k: np.ndarray, alphabet: int, depth: int) -> list[np.ndarray]:
    codes = []
    code = np.zeros(len(k), dtype=np.int64)
    for d in range(depth):
        code = code * alphabet + sym[k + d]
        codes.append(code.copy())
    return codes


def stationary_sample(susp: Suspension, count: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """(first symbol, time) pairs from the normalised (μ̄ × Leb) on the suspension."""
    roofs = susp.roof_values()
    w = susp.ifs.probs * roofs
    first = rng.choice(len(roofs), size=count, p=w / w.sum())
    return first, rng.random(count) * roofs[first]


def birkhoff_averages(susp: Suspension, beta: float, horizon: int, seq: np.ndarray, t0: float,
                      depth: int = 3) -> np.ndarray:
    """Averages of the cylinder × bump test bank along one 𝒯_β orbit.

    ``seq`` must be long enough to cover ``t0 + β·horizon`` time units.
    """
    roofs = susp.roof_values()
    A = len(roofs)
    cum = np.concatenate([[0.0], np.cumsum(roofs[seq])])
    times = t0 + beta * np.arange(horizon)
    k = np.searchsorted(cum, times, side="right") - 1
    if k[-1] + depth >= len(seq):
        raise DomainError("symbol sequence too short for the horizon")
    local = (times - cum[k]) / roofs[seq[k]]
    bumps = _bumps(local)
    out = []
    for d, code in enumerate(_cylinder_codes(seq, k, A, depth), start=1):
        counts = np.zeros((A**d, 4))
        for b in range(4):
            counts[:, b] = np.bincount(code, weights=bumps[b], minlength=A**d)
        out.append(counts.ravel() / horizon)
    return np.concatenate(out)


def ergodicity_diagnostic(susp: Suspension, beta, trials: int = 16, horizon: int = 100000,
                          seed=0, depth: int = 3) -> DiagnosticReport:
    """Spread of Birkhoff averages across random starts.

    The spread is the largest deviation, over test functions and starts,
    of an orbit average from the mean across starts.  It is a diagnostic:
    small values are consistent with ergodicity of 𝒯_β.
    """
    b = float(as_fraction(beta)) if isinstance(beta, (str, Fraction)) else float(beta)
    if b <= 0:
        raise DomainError("beta must be positive")
    rng = np.random.default_rng(seed)
    roofs = susp.roof_values()
    mean_roof = float(susp.ifs.probs @ roofs)
    length = int(b * horizon / mean_roof * 1.2 + 20 * math.sqrt(horizon) + depth + 64)
    avgs = []
    for t in range(trials):
        first, t0 = stationary_sample(susp, 1, rng)
        rest = BernoulliSeq(susp.ifs.probs, (int(rng.integers(2**62)), t)).array(0, length)
        seq = np.concatenate([first, rest])
        avgs.append(birkhoff_averages(susp, b, horizon, seq, float(t0[0]), depth))
    avgs = np.array(avgs)
    spread = float(np.max(np.abs(avgs - avgs.mean(axis=0))))
    lock = rational_lock(susp, beta)
    return DiagnosticReport(b, trials, horizon, spread, lock.locked, lock, avgs)


def write_diagnostic_csv(path, reports, config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(DIAGNOSTIC_HEADER + (("config_hash",) if config_hash else ()))
        for r in reports:
            wr.writerow(r.row() + ([config_hash] if config_hash else []))


# ---------------------------------------------------------------------------
# equidistribution of σ^{t_nN} 𝚒


@dataclass
class EquidistributionTrace:
    depth: int
    visits: int
    words: list[tuple[int, ...]]
    freq: np.ndarray
    half_freq: np.ndarray
    masses: np.ndarray
    tv_gap: float
    tv_to_bernoulli: float
    missing: list[tuple[int, ...]] = field(default_factory=list)


def stopping_times_bulk(s: SymbolSeq, levels: np.ndarray, ifs: DiagonalIFS, axis: int = 2) -> np.ndarray:
    """t_n for many n at once from cumulative log-contractions.

    When every ratio on the axis is a power of two the logs are integers
    and float sums are exact; otherwise ties with 2^-n cannot occur for
    a multiplicatively independent ratio, and floats decide.
    """
    logs = -ifs.log2_abs(axis)
    levels = np.asarray(levels)
    top = float(levels.max()) if len(levels) else 0.0
    need = int(top / logs.min()) + 2
    syms = s.array(0, need)
    cum = np.concatenate([[0.0], np.cumsum(logs[syms])])
    powers = all(float(v).is_integer() for v in logs)
    if powers:
        cum = np.round(cum)
    return np.searchsorted(cum, levels - (0 if powers else 1e-12), side="left")


def equidistribution_trace(s: SymbolSeq, N: int, depth: int, m_max: int, ifs: DiagonalIFS) -> EquidistributionTrace:
    """Frequencies of depth-``depth`` cylinders visited by σ^{t_{nN}}𝚒, n = 1..m_max."""
    if N < 1:
        raise DomainError("N must be at least 1")
    A = len(ifs)
    words = list(iproduct(range(A), repeat=depth))
    masses = np.array([float(np.prod([ifs.probs[c] for c in w])) for w in words]) if depth else np.ones(1)
    if depth == 0:
        return EquidistributionTrace(0, m_max, [()], np.ones(1), np.ones(1), np.ones(1), 0.0, 0.0)
    t = stopping_times_bulk(s, N * np.arange(1, m_max + 1), ifs)
    syms = s.array(0, int(t.max()) + depth + 1)
    code = np.zeros(len(t), dtype=np.int64)
    for d in range(depth):
        code = code * A + syms[t + d]
    freq = np.bincount(code, minlength=A**depth) / len(t)
    half = np.bincount(code[: len(t) // 2], minlength=A**depth) / max(len(t) // 2, 1)
    tv_gap = 0.5 * float(np.abs(freq - half).sum())
    tv_b = 0.5 * float(np.abs(freq - masses).sum())
    missing = [w for w, f in zip(words, freq) if f == 0]
    return EquidistributionTrace(depth, len(t), words, freq, half, masses, tv_gap, tv_b, missing)


def flow_samples(susp: Suspension, beta: float, count: int, seed=0, steps: int = 1,
                 digits: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Stationary samples and their images under 𝒯_β^steps, as 2-D points.

    A point (𝚒, t) is drawn as (Σ i_k A^{-k-1}, t): the base-A code of the
    sequence and the height.
    """
    rng = np.random.default_rng(seed)
    roofs = susp.roof_values()
    A = len(roofs)
    first, t0 = stationary_sample(susp, count, rng)
    span = int(beta * steps / roofs.min()) + digits + 2
    cdf = np.cumsum(susp.ifs.probs)
    cdf[-1] = 1.0
    rest = np.searchsorted(cdf, rng.random((count, span)), side="right")
    seqs = np.concatenate([first[:, None], rest], axis=1)
    weights = float(A) ** -np.arange(1, digits + 1)

    def encode(offsets, t):
        idx = offsets[:, None] + np.arange(digits)[None, :]
        return np.column_stack([seqs[np.arange(count)[:, None], idx] @ weights, t])

    before = encode(np.zeros(count, dtype=np.int64), t0)
    t = t0 + beta * steps
    off = np.zeros(count, dtype=np.int64)
    while True:
        r = roofs[seqs[np.arange(count), off]]
        cross = t >= r
        if not cross.any():
            break
        t = np.where(cross, t - r, t)
        off = off + cross
    return before, encode(off, t)
