"""Measure representations, dyadic entropy and transport distances.

Two avatars of a self-affine measure are provided.  :class:`SampleMeasure`
is a weighted point cloud produced by iterating the IFS on random words;
:class:`CylinderMeasure` is an exact cylinder tree refined until every
piece sits inside one dyadic cell (or is negligibly small), giving
entropies with a deterministic, bounded error.

Entropies are in bits throughout.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .affine import DiagonalIFS, Rect
from .symbolic import DomainError, as_fraction

_NODE_CAP = 2**23


class EmptyWindowError(DomainError):
    def __init__(self, mass: float = 0.0):
        super().__init__(f"window has mass {mass}")
        self.mass = mass


class Method(str, Enum):
    EXACT_CYLINDER = "EXACT_CYLINDER"
    SAMPLE = "SAMPLE"


@dataclass(frozen=True)
class DyadicPartition:
    n: int
    dim: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("dyadic partitions are 1- or 2-dimensional")

    def cells(self, points: np.ndarray) -> np.ndarray:
        """Integer cell labels (one column per axis)."""
        pts = np.asarray(points, dtype=float).reshape(len(points), -1)
        if pts.shape[1] != self.dim:
            raise DomainError(f"points are {pts.shape[1]}-D, partition is {self.dim}-D")
        return np.floor(np.ldexp(pts, self.n)).astype(np.int64)


@dataclass(frozen=True)
class EntropyReport:
    n: int
    H_bits: float
    cells: int
    method: Method

    def row(self) -> list:
        return [self.n, repr(self.H_bits), self.cells, self.method.value]


EntropyReport.header = ("n", "H_bits", "cells", "method")


# ---------------------------------------------------------------------------
# sample clouds


@dataclass
class SampleMeasure:
    """A weighted point cloud; ``points`` has shape (count, dim)."""

    points: np.ndarray
    weights: np.ndarray | None = None
    seed: object = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[1] not in (1, 2):
            raise DomainError("sample measures are 1- or 2-dimensional")
        self.points = pts
        if self.weights is None:
            w = np.full(len(pts), 1.0 / max(len(pts), 1))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(pts),) or np.any(w < 0):
                raise DomainError("weights must be nonnegative, one per point")
            total = w.sum()
            if total <= 0:
                raise DomainError("weights sum to zero")
            w = w / total
        self.weights = w

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def coords(self, axis: int = 0) -> np.ndarray:
        return self.points[:, axis]

    def to_csv(self, path) -> None:
        names = ["x", "y"][: self.dim] + ["w"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(names)
            for p, w in zip(self.points, self.weights):
                wr.writerow([repr(float(v)) for v in p] + [repr(float(w))])

    @classmethod
    def from_csv(cls, path) -> "SampleMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        return cls(body[:, : len(header) - 1], body[:, -1])


def sample_words(ifs: DiagonalIFS, count: int, depth: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` iid μ̄-words of length ``depth`` (int8/int16 array)."""
    dtype = np.int8 if len(ifs) < 127 else np.int16
    cdf = np.cumsum(ifs.probs)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random((count, depth)), side="right").astype(dtype)


def project_words(ifs: DiagonalIFS, words: np.ndarray, tail: np.ndarray | None = None) -> np.ndarray:
    """Π applied to the rows of ``words`` (then ``tail`` points, default 0)."""
    lx, ly = ifs.lam_array(1), ifs.lam_array(2)
    ax, ay = ifs.offset_array(1), ifs.offset_array(2)
    count, depth = words.shape
    if tail is None:
        x = np.zeros(count)
        y = np.zeros(count)
    else:
        x, y = tail[:, 0].copy(), tail[:, 1].copy()
    for k in range(depth - 1, -1, -1):
        s = words[:, k]
        x = lx[s] * x + ax[s]
        y = ly[s] * y + ay[s]
    return np.column_stack([x, y])


def sample_depth(ifs: DiagonalIFS, bits: int = 40) -> int:
    """Word length after which truncation moves points by < 2^-bits."""
    rho = max(np.max(np.abs(ifs.lam_array(1))), np.max(np.abs(ifs.lam_array(2))))
    return max(1, int(math.ceil(bits / -math.log2(rho))))


def sample(ifs: DiagonalIFS, count: int, seed, chunk: int = 1 << 16) -> SampleMeasure:
    """``count`` iid draws from μ.

    Each draw applies a random word of length :func:`sample_depth` to the
    origin, i.e. a chaos game read backwards with the burn-in folded into
    the word length.
    """
    if count <= 0:
        raise DomainError("count must be positive")
    ifs.require_valid()
    rng = np.random.default_rng(seed)
    depth = sample_depth(ifs)
    parts = []
    done = 0
    while done < count:
        m = min(chunk, count - done)
        parts.append(project_words(ifs, sample_words(ifs, m, depth, rng)))
        done += m
    return SampleMeasure(np.concatenate(parts), None, seed)


def project_theta(m: SampleMeasure, theta) -> SampleMeasure:
    """Push forward under ``(x, y) ↦ x + 2^θ y``."""
    _need_dim(m, 2)
    c = 2.0 ** float(theta)
    return SampleMeasure(m.points[:, 0] + c * m.points[:, 1], m.weights, m.seed)


def project_axis(m: SampleMeasure, axis: str) -> SampleMeasure:
    if axis not in ("x", "y"):
        raise DomainError("axis must be 'x' or 'y'")
    if m.dim == 1:
        if axis == "x":
            return m
        raise DomainError("1-D measure has no y-coordinate")
    return SampleMeasure(m.points[:, 0 if axis == "x" else 1], m.weights, m.seed)


def embed(m: SampleMeasure, y: float = 0.0) -> SampleMeasure:
    """Place a 1-D measure on the horizontal line at height ``y``."""
    _need_dim(m, 1)
    return SampleMeasure(np.column_stack([m.points[:, 0], np.full(len(m), y)]), m.weights, m.seed)


def scale_y(m: SampleMeasure, theta) -> SampleMeasure:
    _need_dim(m, 2)
    pts = m.points.copy()
    pts[:, 1] *= 2.0 ** float(theta)
    return SampleMeasure(pts, m.weights, m.seed)


def translate(m: SampleMeasure, offset) -> SampleMeasure:
    off = np.broadcast_to(np.asarray(offset, dtype=float), (m.dim,))
    return SampleMeasure(m.points + off, m.weights, m.seed)


def _window_bounds(window, dim: int) -> list[tuple[float, float]]:
    if isinstance(window, Rect):
        bounds = [(float(window.x0), float(window.x1)), (float(window.y0), float(window.y1))]
    else:
        w = list(window)
        if len(w) == 2 and not isinstance(w[0], (tuple, list)):
            bounds = [(float(w[0]), float(w[1]))]
        else:
            bounds = [(float(a), float(b)) for a, b in w]
    if len(bounds) != dim:
        raise DomainError("window dimension does not match the measure")
    return bounds


def restrict_rescale(m, window, half_open: bool = True) -> SampleMeasure:
    """Condition on ``window`` and map it affinely onto [-1, 1]^d.

    Windows are half-open ``[lo, hi)`` per axis by default.  Degenerate
    axes (``lo == hi``) are sent to 0.
    """
    if isinstance(m, CylinderMeasure):
        m = m.atoms()
    bounds = _window_bounds(window, m.dim)
    keep = np.ones(len(m), dtype=bool)
    for ax, (lo, hi) in enumerate(bounds):
        v = m.points[:, ax]
        keep &= (v >= lo) & ((v < hi) if (half_open and hi > lo) else (v <= hi))
    mass = float(m.weights[keep].sum())
    if mass <= 0:
        raise EmptyWindowError(mass)
    pts = m.points[keep].copy()
    for ax, (lo, hi) in enumerate(bounds):
        pts[:, ax] = 0.0 if hi == lo else 2.0 * (pts[:, ax] - lo) / (hi - lo) - 1.0
    return SampleMeasure(pts, m.weights[keep], m.seed)


def product(mx: SampleMeasure, my: SampleMeasure, seed=0, pairing: str = "independent-resample") -> SampleMeasure:
    """Independent coupling of two 1-D measures by seeded resampling."""
    if pairing != "independent-resample":
        raise DomainError(f"unknown pairing {pairing!r}")
    _need_dim(mx, 1)
    _need_dim(my, 1)
    if len(mx) == 0 or len(my) == 0:
        raise DomainError("empty input")
    size = min(len(mx), len(my))
    rng = np.random.default_rng(seed)
    ix, iy = (rng.integers(len(m), size=size) if m.uniform else rng.choice(len(m), size=size, p=m.weights)
              for m in (mx, my))
    return SampleMeasure(np.column_stack([mx.points[ix, 0], my.points[iy, 0]]), None, seed)


def _need_dim(m: SampleMeasure, d: int):
    if m.dim != d:
        raise DomainError(f"expected a {d}-D measure, got {m.dim}-D")


# ---------------------------------------------------------------------------
# exact cylinder trees


class CylinderMeasure:
    """μ resolved by cylinders down to dyadic level ``resolution``.

    A cylinder [w] is split until its rectangle φ_w(B) (B the attractor's
    bounding box) lies in a single dyadic cell of level ``resolution`` or
    has diameter at most ``2^-(resolution+guard)``; in the latter case its
    mass goes to the cell of Π(w·0^∞).  Entropies at coarser levels
    aggregate these cell masses, so all levels describe one discrete
    measure and nested-partition identities hold exactly.

    ``functional`` ``(c1, c2)`` replaces μ by its image under
    ``c1·x + c2·y`` (a 1-D measure); ``translation`` shifts the measure
    before cells are assigned.
    """

    def __init__(self, ifs: DiagonalIFS, resolution: int = 12, guard: int = 3,
                 functional: Sequence[float] | None = None, translation=None):
        ifs.require_valid()
        if resolution < 0:
            raise DomainError("resolution must be nonnegative")
        self.ifs = ifs
        self.resolution = int(resolution)
        self.guard = int(guard)
        self.functional = None if functional is None else tuple(float(c) for c in functional)
        self.dim = 1 if self.functional is not None else 2
        t = np.zeros(self.dim) if translation is None else np.asarray(translation, dtype=float)
        self.translation = np.broadcast_to(t, (self.dim,)).astype(float)
        self._cells: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._atoms = None

    def _refine(self):
        ifs = self.ifs
        n, g = self.resolution, self.guard
        scale = 2.0**n
        tiny = 2.0 ** -(n + g)
        lx, ly = ifs.lam_array(1), ifs.lam_array(2)
        ax, ay = ifs.offset_array(1), ifs.offset_array(2)
        p = ifs.probs
        k = len(p)
        bx0, bx1, by0, by1 = ifs.bbox
        # fixed point of map 0, the anchor's tail
        fx = ax[0] / (1 - lx[0])
        fy = ay[0] / (1 - ly[0])
        if self.functional is None:
            # node: mass, offset (ox, oy), signed contractions (cx, cy)
            state = [np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), np.ones(1)]
        else:
            # node: mass, projected offset, u = c1·λ1(w), v = c2·λ2(w)
            c1, c2 = self.functional
            state = [np.ones(1), np.zeros(1), np.zeros(1), np.full(1, c1), np.full(1, c2)]
        out_cells, out_mass, out_anchor = [], [], []
        while len(state[0]):
            mass, ox, oy, cx, cy = state
            xs = np.stack([cx * bx0, cx * bx1])
            ys = np.stack([cy * by0, cy * by1])
            if self.functional is None:
                lo = [ox + xs.min(0), oy + ys.min(0)]
                hi = [ox + xs.max(0), oy + ys.max(0)]
                anchor = [ox + cx * fx, oy + cy * fy]
            else:
                lo = [ox + xs.min(0) + ys.min(0)]
                hi = [ox + xs.max(0) + ys.max(0)]
                anchor = [ox + cx * fx + cy * fy]
            lo = [v + t for v, t in zip(lo, self.translation)]
            hi = [v + t for v, t in zip(hi, self.translation)]
            anchor = [v + t for v, t in zip(anchor, self.translation)]
            inside = np.ones(len(mass), dtype=bool)
            diam2 = np.zeros(len(mass))
            for lo_a, hi_a in zip(lo, hi):
                a = np.floor(lo_a * scale)
                b_s = hi_a * scale
                # cells are half-open and μ has no atoms on a cylinder's edge
                b = np.where((b_s == np.floor(b_s)) & (hi_a > lo_a), b_s - 1, np.floor(b_s))
                inside &= a == b
                diam2 += (hi_a - lo_a) ** 2
            done = inside | (diam2 <= tiny * tiny)
            if done.any():
                anc = np.stack([v[done] for v in anchor], axis=1)
                out_cells.append(np.floor(anc * scale).astype(np.int64))
                out_mass.append(mass[done])
                out_anchor.append(anc)
            keep = ~done
            if not keep.any():
                break
            mass, ox, oy, cx, cy = (v[keep] for v in state)
            m = len(mass)
            r_cx, r_cy = np.repeat(cx, k), np.repeat(cy, k)
            t_ax, t_ay = np.tile(ax, m), np.tile(ay, m)
            if self.functional is None:
                nox = np.repeat(ox, k) + r_cx * t_ax
                noy = np.repeat(oy, k) + r_cy * t_ay
            else:
                nox = np.repeat(ox, k) + r_cx * t_ax + r_cy * t_ay
                noy = np.zeros(m * k)
            state = _merge_nodes(np.repeat(mass, k) * np.tile(p, m), nox, noy,
                                 r_cx * np.tile(lx, m), r_cy * np.tile(ly, m))
            if len(state[0]) > _NODE_CAP:
                raise MemoryError(
                    f"cylinder refinement exceeded {_NODE_CAP} nodes at resolution {n}; "
                    "lower the resolution or use sampling")
        cells = np.concatenate(out_cells)
        masses = np.concatenate(out_mass)
        self._atoms = (np.concatenate(out_anchor), masses)
        uniq, inv = np.unique(cells, axis=0, return_inverse=True)
        tot = np.zeros(len(uniq))
        np.add.at(tot, inv.ravel(), masses)
        self._cells[n] = (uniq, tot)

    def cell_masses(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Occupied level-``n`` cells and their masses (``n <= resolution``)."""
        if n < 0 or n > self.resolution:
            raise DomainError(f"level {n} outside 0..{self.resolution}")
        if self.resolution not in self._cells:
            self._refine()
        if n not in self._cells:
            cells, mass = self._cells[self.resolution]
            coarse = cells >> (self.resolution - n)
            uniq, inv = np.unique(coarse, axis=0, return_inverse=True)
            tot = np.zeros(len(uniq))
            np.add.at(tot, inv.ravel(), mass)
            self._cells[n] = (uniq, tot)
        return self._cells[n]

    def atoms(self) -> SampleMeasure:
        """The discretised measure: anchors weighted by cylinder mass."""
        if self._atoms is None:
            self._refine()
        pts, w = self._atoms
        return SampleMeasure(pts, w)


def _merge_nodes(mass, ox, oy, cx, cy):
    """Merge cylinders with identical geometry (duplicate maps, overlaps)."""
    key = np.stack([ox, oy, cx, cy], axis=1)
    bits = np.ascontiguousarray(key).view(np.uint64)
    h = bits[:, 0] * np.uint64(0x9E3779B97F4A7C15)
    for c in range(1, 4):
        h = (h ^ bits[:, c]) * np.uint64(0xBF58476D1CE4E5B9)
    if len(np.unique(h)) == len(h):
        return mass, ox, oy, cx, cy
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    tot = np.zeros(len(uniq))
    np.add.at(tot, inv.ravel(), mass)
    return tot, uniq[:, 0], uniq[:, 1], uniq[:, 2], uniq[:, 3]


# ---------------------------------------------------------------------------
# entropy


def _shannon(masses: np.ndarray) -> float:
    m = masses[masses > 0]
    m = m / m.sum()
    return float(-(m * np.log2(m)).sum())


def _sample_cell_masses(m: SampleMeasure, n: int, offset=0.0):
    cells = DyadicPartition(n, m.dim).cells(m.points + offset)
    if m.dim == 2 and len(cells):
        # pack both labels into one int64 key; much faster than unique rows
        lo = cells.min(axis=0)
        span = int(cells[:, 1].max() - lo[1]) + 1
        key = (cells[:, 0] - lo[0]) * span + (cells[:, 1] - lo[1])
        ukey, inv = np.unique(key, return_inverse=True)
        uniq = np.column_stack([ukey // span + lo[0], ukey % span + lo[1]])
    else:
        uniq, inv = np.unique(cells, axis=0, return_inverse=True)
    tot = np.bincount(inv.ravel(), weights=m.weights, minlength=len(uniq))
    return uniq, tot


def _cell_masses(m, part: DyadicPartition):
    if m.dim != part.dim:
        raise DomainError(f"{m.dim}-D measure against a {part.dim}-D partition")
    if isinstance(m, CylinderMeasure):
        return m.cell_masses(part.n)
    return _sample_cell_masses(m, part.n)


def entropy(m, part: DyadicPartition) -> EntropyReport:
    """``H(m, D_n) = -Σ m(E) log2 m(E)`` over occupied dyadic cells."""
    cells, mass = _cell_masses(m, part)
    method = Method.EXACT_CYLINDER if isinstance(m, CylinderMeasure) else Method.SAMPLE
    return EntropyReport(part.n, _shannon(mass), int(len(mass)), method)


def conditional_entropy(m, fine: DyadicPartition, coarse: DyadicPartition) -> float:
    """``H(m, D_fine | D_coarse) = Σ_F m(F) H(m_F, D_fine)``.

    Computed directly from the conditional measures on coarse cells rather
    than as a difference of entropies.
    """
    if fine.n < coarse.n:
        raise DomainError("fine level must not be coarser than the coarse level")
    if fine.dim != coarse.dim:
        raise DomainError("partitions differ in dimension")
    cells, mass = _cell_masses(m, fine)
    parent = cells >> (fine.n - coarse.n)
    uniq, inv = np.unique(parent, axis=0, return_inverse=True)
    inv = inv.ravel()
    total = 0.0
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    grand = mass.sum()
    for g in range(len(uniq)):
        block = mass[order[bounds[g]:bounds[g + 1]]]
        w = block.sum()
        if w > 0 and len(block) > 1:
            total += (w / grand) * _shannon(block)
    return total


def smoothed_entropy(m: SampleMeasure, n: int, offsets: int = 16) -> float:
    """Translation-averaged entropy: mean of ``H_n(δ_x * m)`` over
    ``offsets`` equally spaced shifts x in [0, 2^-n) along every axis."""
    vals = []
    for k in range(offsets):
        shift = (k + 0.5) / offsets * 2.0**-n
        _, mass = _sample_cell_masses(m, n, shift)
        vals.append(_shannon(mass))
    return float(np.mean(vals))


def max_sample_level(count: int) -> int:
    """Largest n with ``count >= 100·2^n`` (the plug-in sample-size rule)."""
    return int(math.floor(math.log2(max(count, 1) / 100.0))) if count >= 100 else -1


# ---------------------------------------------------------------------------
# transport


def wasserstein1(a: SampleMeasure, b: SampleMeasure, max_points: int = 2048, seed=0) -> float:
    """Earth mover's distance.

    In 1-D the quantile coupling is exact for any weights.  In 2-D both
    measures are resampled (uniformly if unweighted and small enough) to
    a common size ``<= max_points`` and an optimal matching is solved.
    """
    if a.dim != b.dim:
        raise DomainError("dimension mismatch")
    if len(a) == 0 or len(b) == 0:
        raise DomainError("empty measure")
    if a.dim == 1:
        return _w1_line(a.points[:, 0], a.weights, b.points[:, 0], b.weights)
    if max_points > 4096:
        raise DomainError("2-D matching is limited to 4096 points")
    rng = np.random.default_rng(seed)
    k = min(max_points, len(a), len(b))
    pa = _subsample(a, k, rng)
    pb = _subsample(b, k, rng)
    cost = cdist(pa, pb)
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean())


def _subsample(m: SampleMeasure, k: int, rng) -> np.ndarray:
    if m.uniform and k == len(m):
        return m.points
    if m.uniform:
        return m.points[rng.choice(len(m), size=k, replace=False)]
    return m.points[rng.choice(len(m), size=k, replace=True, p=m.weights)]


def _w1_line(xa, wa, xb, wb) -> float:
    oa, ob = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa, xb, wb = xa[oa], wa[oa], xb[ob], wb[ob]
    grid = np.concatenate([xa, xb])
    order = np.argsort(grid, kind="stable")
    grid = grid[order]
    fa = np.searchsorted(xa, grid, side="right")
    fb = np.searchsorted(xb, grid, side="right")
    ca = np.concatenate([[0.0], np.cumsum(wa)])[fa]
    cb = np.concatenate([[0.0], np.cumsum(wb)])[fb]
    gaps = np.diff(grid)
    return float(np.sum(np.abs(ca - cb)[:-1] * gaps))


def lp_upper(a: SampleMeasure, b: SampleMeasure, **kw) -> float:
    """Upper bound on the Lévy–Prokhorov distance: ``d_LP <= sqrt(W1)``."""
    return math.sqrt(wasserstein1(a, b, **kw))
