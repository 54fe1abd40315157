from __future__ import annotations

import pytest

from samlab.affine import DiagonalIFS, DiagonalMap


def make_ifs(maps, weights=None, name=""):
    ms = [DiagonalMap(l1, l2, a) for l1, l2, a in maps]
    return DiagonalIFS(ms, weights or [f"1/{len(ms)}"] * len(ms), name=name)


def const_ifs(l1, l2, k=2):
    """k maps sharing the ratios (l1, l2), translated along the diagonal."""
    return make_ifs([(l1, l2, (f"{i}/{2 * k}", f"{i}/{2 * k}")) for i in range(k)])


@pytest.fixture
def lebesgue_line():
    return make_ifs([("1/2", "1/2", ("0", "0")), ("1/2", "1/2", ("1/2", "0"))])


@pytest.fixture
def cantor():
    return make_ifs([("1/3", "1/2", ("0", "0")), ("1/3", "1/2", ("2/3", "0"))])


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
