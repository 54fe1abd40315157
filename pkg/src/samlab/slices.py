"""Conditional measures of μ on vertical (or horizontal) lines.

μ disintegrates over π_x as μ = ∫ δ_{π_x Π(𝚒)} × μ_𝚒 dμ̄(𝚒).  The slice
μ_𝚒 is approximated by conditioning μ on the column of half-width 2^-L
around π_x Π(𝚒), either by filtering a sample pool or by the splitting
sampler of :mod:`samlab.partitions` when the column is too thin for the
pool.  Horizontal slices are obtained by transposing the system.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .affine import DiagonalIFS
from .measures import (CylinderMeasure, DyadicPartition, SampleMeasure, entropy, max_sample_level,
                       sample, wasserstein1)
from .partitions import conditional_sample
from .symbolic import BernoulliSeq, DomainError, SymbolSeq, shift

REPORT_HEADER = ("trial", "dim2d", "dimx", "dimslice", "defect")
MIN_COLUMN = 50


class ThinColumnError(DomainError):
    def __init__(self, count: int, needed: int = MIN_COLUMN):
        super().__init__(f"column holds {count} points, need {needed}")
        self.count = count


@dataclass
class SliceMeasure:
    """μ_𝚒 at column resolution 2^-L.

    ``raw`` holds the conditioned coordinates along the slice;
    ``measure`` is the same cloud mapped affinely from the attractor's
    extent on that axis onto [-1, 1].
    """

    base: SymbolSeq | None
    L: int
    center: float
    raw: np.ndarray
    measure: SampleMeasure
    count: int
    method: str = "pool"


def _orient(ifs: DiagonalIFS, axis: str) -> DiagonalIFS:
    if axis not in ("x", "y"):
        raise DomainError("axis must be 'x' or 'y'")
    return ifs if axis == "x" else ifs.transpose()


def _rescaled(values: np.ndarray, lo: float, hi: float) -> SampleMeasure:
    if hi > lo:
        return SampleMeasure(2.0 * (values - lo) / (hi - lo) - 1.0)
    return SampleMeasure(np.zeros_like(values))


def slice(ifs: DiagonalIFS, base: SymbolSeq | float, L: int = 10, pool: SampleMeasure | None = None,
          samples: int | None = None, seed=0, axis: str = "x") -> SliceMeasure:
    """Slice of μ through π_axis Π(base).

    With a ``pool`` the column is filtered from it and must contain at
    least 50 points.  Without one, ``samples`` draws are produced by the
    splitting sampler.  ``base`` may also be a coordinate directly.
    """
    sys = _orient(ifs, axis)
    if isinstance(base, SymbolSeq):
        center = sys.point(base)[0]
    else:
        center = float(base)
    half = 2.0**-L
    _, _, y0, y1 = sys.bbox
    if pool is not None:
        pts = pool.points if axis == "x" else pool.points[:, ::-1]
        keep = np.abs(pts[:, 0] - center) <= half
        count = int(keep.sum())
        if count < MIN_COLUMN:
            raise ThinColumnError(count)
        raw = pts[keep, 1]
        return SliceMeasure(base if isinstance(base, SymbolSeq) else None, L, center, raw,
                            _rescaled(raw, y0, y1), count, "pool")
    n = samples or 4096
    c = Fraction(center)
    tube = (c - Fraction(1, 2**L), c + Fraction(1, 2**L))
    cs = conditional_sample(sys, (), {1: tube}, n, seed)
    raw = cs.coord[2]
    return SliceMeasure(base if isinstance(base, SymbolSeq) else None, L, center, raw,
                        _rescaled(raw, y0, y1), cs.count, "split")


def slice_cauchy(ifs: DiagonalIFS, base, levels=(6, 8, 10, 12), samples: int = 4096, seed=0,
                 axis: str = "x") -> list[tuple[int, float]]:
    """W1 between slices at consecutive column resolutions."""
    out = []
    prev = None
    for L in levels:
        cur = slice(ifs, base, L, samples=samples, seed=(seed, L), axis=axis)
        if prev is not None:
            out.append((L, wasserstein1(prev.measure, cur.measure)))
        prev = cur
    return out


def dynamical_self_similarity_check(ifs: DiagonalIFS, base: SymbolSeq, L: int = 10,
                                    pool: SampleMeasure | None = None, samples: int = 4096,
                                    seed=0, axis: str = "x") -> float:
    """Residual W1 in the identity (μ_𝚒)|φ_i-part = φ_i(μ_{σ𝚒}).

    The slice through 𝚒 is restricted to points coded by a word starting
    with i = 𝚒_0 (kept by the sampler as the first continuation symbol),
    pulled back through the y-part of φ_i, and compared with the slice
    through σ𝚒.
    """
    sys = _orient(ifs, axis)
    i = int(base[0])
    center = sys.point(base)[0]
    half = Fraction(1, 2**L)
    c = Fraction(center)
    cs = conditional_sample(sys, (), {1: (c - half, c + half)}, samples, seed, keep_words=1)
    mask = cs.words[:, 0] == i
    if not mask.any():
        raise DomainError("restriction to the first map is empty")
    if mask.mean() < 0.9:
        # redraw so that the restricted part alone has about ``samples`` points
        more = min(16 * samples, int(math.ceil(1.1 * samples / mask.mean())))
        cs = conditional_sample(sys, (), {1: (c - half, c + half)}, more, seed, keep_words=1)
        mask = cs.words[:, 0] == i
    m = sys.maps[i]
    pulled = (cs.coord[2][mask] - float(m.a[1])) / float(m.l2)
    # the column through σ𝚒 is φ_i^{-1} of the column through 𝚒
    lo, hi = sorted(((c - half - m.a[0]) / m.l1, (c + half - m.a[0]) / m.l1))
    ref = conditional_sample(sys, (), {1: (lo, hi)}, samples, np.random.default_rng(seed).integers(2**63))
    _, _, y0, y1 = sys.bbox
    return wasserstein1(_rescaled(pulled, y0, y1), _rescaled(ref.coord[2], y0, y1))


@dataclass
class ConservationReport:
    rows: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    dim2d: float = 0.0
    dimx: float = 0.0
    dimslice: float = 0.0
    defect: float = 0.0

    def write_csv(self, path, config_hash: str | None = None):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(REPORT_HEADER + (("config_hash",) if config_hash else ()))
            for r in self.rows:
                wr.writerow([r[0]] + [repr(float(v)) for v in r[1:]] + ([config_hash] if config_hash else []))


def _slope(levels, values) -> float:
    return float(np.polyfit(np.asarray(levels, float), np.asarray(values, float), 1)[0])


def dimension_conservation_check(ifs: DiagonalIFS, trials: int = 8, L: int = 12, n: int = 10,
                                 samples: int = 1 << 16, seed=0, axis: str = "x") -> ConservationReport:
    """Compare dim μ with dim π_axis μ + average slice dimension.

    The first two come from exact cylinder entropies as regression slopes
    over levels ``n-6..n``.  Slice dimensions are plug-in slopes over the
    levels allowed by the sample-size rule.
    """
    sys = _orient(ifs, axis)
    levels = list(range(max(1, n - 6), n + 1))
    cm2 = CylinderMeasure(sys, n)
    cmx = CylinderMeasure(sys, n, functional=(1.0, 0.0))
    h2 = [entropy(cm2, DyadicPartition(k, 2)).H_bits for k in levels]
    hx = [entropy(cmx, DyadicPartition(k, 1)).H_bits for k in levels]
    dim2d, dimx = _slope(levels, h2), _slope(levels, hx)
    top = max_sample_level(samples)
    s_levels = list(range(max(1, top - 5), top + 1))
    rng = np.random.default_rng(seed)
    rep = ConservationReport(dim2d=dim2d, dimx=dimx)
    dims = []
    for t in range(trials):
        base = BernoulliSeq(sys.probs, (int(rng.integers(2**31)), t))
        sl = slice(sys, base, L, samples=samples, seed=(int(rng.integers(2**31)), t))
        m = SampleMeasure(sl.raw)
        hs = [entropy(m, DyadicPartition(k, 1)).H_bits for k in s_levels]
        d = _slope(s_levels, hs)
        dims.append(d)
        rep.rows.append((t, dim2d, dimx, d, abs(dim2d - dimx - d)))
    rep.dimslice = float(np.mean(dims))
    rep.defect = abs(dim2d - dimx - rep.dimslice)
    return rep


def reassemble(ifs: DiagonalIFS, bases: int = 64, per_slice: int = 64, L: int = 10, seed=0) -> SampleMeasure:
    """∫ δ_{π_xΠ(𝚒)} × μ_𝚒 dμ̄(𝚒) from ``bases`` sampled slices."""
    rng = np.random.default_rng(seed)
    pts = []
    for b in range(bases):
        base = BernoulliSeq(ifs.probs, (int(rng.integers(2**31)), b))
        sl = slice(ifs, base, L, samples=per_slice, seed=(int(rng.integers(2**31)), b))
        pts.append(np.column_stack([np.full(len(sl.raw), sl.center), sl.raw]))
    return SampleMeasure(np.concatenate(pts))
