"""Named oracle systems shipped with the package."""
from __future__ import annotations

from .affine import DiagonalIFS, DiagonalMap


def _ifs(name: str, maps, weights=None) -> DiagonalIFS:
    ms = [DiagonalMap(l1, l2, a) for l1, l2, a in maps]
    ws = weights or [f"1/{len(ms)}"] * len(ms)
    return DiagonalIFS(ms, ws, name=name)


_SPECS = {
    # λ ≡ 1/2 on a 2×2 grid: Lebesgue on the unit square
    "selfsim2": ([("1/2", "1/2", (a, b)) for a in ("0", "1/2") for b in ("0", "1/2")], None),
    "bm3": ([("1/3", "1/2", ("0", "0")), ("1/3", "1/2", ("1/3", "0")), ("1/3", "1/2", ("2/3", "1/2"))], None),
    # all fixed points on the line x = 0
    "column": ([("1/2", "1/3", ("0", "0")), ("1/2", "1/3", ("0", "2/3"))], None),
    # y is a function of x on the attractor
    "graph": ([("1/2", "1/3", ("0", "0")), ("1/2", "1/3", ("1/2", "2/3"))], None),
    "ratlock": ([("1/2", "1/4", ("0", "0")), ("1/2", "1/4", ("1/2", "3/4"))], None),
    "eqlyap": ([("1/2", "1/4", ("0", "0")), ("1/4", "1/2", ("1/2", "1/2"))], None),
    # Lebesgue on [0,1] times the middle-third Cantor measure
    "product": ([("1/2", "1/3", (a, b)) for a in ("0", "1/2") for b in ("0", "2/3")], None),
    "mixed": ([("1/2", "1/2", ("0", "0")), ("1/3", "1/3", ("2/3", "2/3"))], None),
    "lebesgue": ([("1/2", "1/2", ("0", "0")), ("1/2", "1/2", ("1/2", "0"))], None),
    "cantor": ([("1/3", "1/2", ("0", "0")), ("1/3", "1/2", ("2/3", "0"))], None),
    # two copies of the same map: μ is the point mass at its fixed point
    "dirac": ([("1/2", "1/2", ("0", "0")), ("1/2", "1/2", ("0", "0"))], None),
}

DESCRIPTIONS = {
    "selfsim2": "four maps of ratio 1/2 tiling the unit square",
    "bm3": "3-map carpet: x/3 + {0,1/3,2/3}, y/2 + {0,0,1/2}",
    "column": "fixed points on a vertical line; π_x μ is a point mass",
    "graph": "x-determined system, slices are point masses",
    "ratlock": "every ratio a power of 1/2",
    "eqlyap": "equal Lyapunov exponents, λ1 = (1/2,1/4), λ2 = (1/4,1/2)",
    "product": "Lebesgue × middle-third Cantor",
    "mixed": "similarities with ratios 1/2 and 1/3",
    "lebesgue": "Lebesgue on [0,1] × {0}",
    "cantor": "middle-third Cantor measure × {0}",
    "dirac": "point mass at the origin",
}


def names() -> list[str]:
    return list(_SPECS)


def get(name: str) -> DiagonalIFS:
    try:
        maps, weights = _SPECS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; known: {', '.join(_SPECS)}") from None
    return _ifs(name, maps, weights)
