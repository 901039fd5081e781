from __future__ import annotations

import numpy as np
import pytest

from loopsoup.lattice import (Box, Slab, Window, box_sites, iter_cells, lattice_edges, slab_contains,
                              subbox_of, subbox_sites)


def test_box_sizes():
    assert len(box_sites(Box.at_origin(2, 3))) == 125
    for d in (1, 2, 3, 4):
        assert len(box_sites(Box.at_origin(0, d))) == 1
    assert len(Box.at_origin(1, 2).boundary_sites()) == 8


def test_box_sites_sorted_and_distinct():
    s = box_sites(Box((1, -2, 0), 1))
    assert len({tuple(p) for p in s}) == len(s)
    assert [tuple(p) for p in s] == sorted(tuple(p) for p in s)


def test_boundary_consistency():
    for r in (1, 2, 3):
        b = Box.at_origin(r, 3)
        s = b.sites()
        inner = {tuple(p) for p in s[~b.on_boundary(s)]}
        assert inner == {tuple(p) for p in Box.at_origin(r - 1, 3).sites()}
        assert b.contains(b.boundary_sites()).all()


@pytest.mark.parametrize("p,m,k", [((2, 0), 2, (1, 0)), ((-1, 0), 2, (-1, 0)), ((5, 5, 5), 5, (1, 1, 1))])
def test_subbox_of(p, m, k):
    assert subbox_of(p, m) == k


def test_subbox_rejects_zero():
    with pytest.raises(ValueError):
        subbox_of((0, 0), 0)


def test_tiling_covers_once():
    rng = np.random.default_rng(3)
    pts = rng.integers(-9, 9, size=(200, 3))
    for m in (1, 2, 3, 5):
        seen = {}
        for k in {subbox_of(p, m) for p in pts}:
            for q in subbox_sites(k, m):
                seen[tuple(q)] = seen.get(tuple(q), 0) + 1
        assert all(seen[tuple(p)] == 1 for p in pts)
        assert all(subbox_of(p, m) == tuple(np.asarray(p) // m) for p in pts)


def test_slab_membership():
    s = Slab(2, 3)
    assert slab_contains(s, (0, 0, 0))
    assert not slab_contains(s, (0, 0, 3))
    assert not slab_contains(s, (-1, 0, 1))
    assert slab_contains(Slab(2, 3, quarter=False), (-1, 0, 1))


def test_slab_window():
    w = Slab(2, 3).window(5)
    assert w.shape == (6, 6, 3)
    assert Slab(2, 3).contains(w.sites()).all()


def test_window_index_round_trip():
    w = Window((-2, 0, 1), (1, 3, 2))
    s = w.sites()
    idx = w.index(s)
    assert (idx == np.arange(w.n_sites)).all()
    assert (w.point(idx) == s).all()
    assert w.index(np.array([[5, 5, 5]]))[0] == -1


def test_window_edges_match_lattice_edges():
    w = Window((0, 0, 0), (2, 1, 1))
    low, ax = w.edges()
    mine = sorted((int(a), int(a + w.strides[x])) for a, x in zip(low, ax))
    assert mine == lattice_edges(w.sites())
    assert w.n_edge_slots == w.n_sites * w.d


def test_iter_cells():
    assert len(list(iter_cells((0, 0), (1, 2)))) == 6
