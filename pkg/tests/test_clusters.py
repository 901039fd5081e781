from __future__ import annotations

import csv

import numpy as np
import pytest

from loopsoup import clusters as cl
from loopsoup.lattice import Slab, Window
from loopsoup.loop_model import IntensityFunction
from loopsoup.sampler import SoupRealization, edge_soup, sample_truncated

W = Window.around(3, 3)
ONE_LOOP = SoupRealization.from_loops([[(0, 0, 0), (1, 0, 0)]], [0.5], alpha_max=1.0, window=W)


def _soup(alpha, m=4, w=W, replica=0, seed=3):
    return sample_truncated(w, IntensityFunction(alpha, 0.0, m), alpha, seed, replica)


def test_empty_soup():
    s = SoupRealization.empty(3, 1.0, window=W)
    e = cl.open_edges(s)
    assert e.slots.size == 0
    f = cl.build_clusters(e)
    assert f.n_components == W.n_sites
    assert not cl.one_arm(f, 1)


def test_single_loop():
    e = cl.open_edges(ONE_LOOP)
    assert e.slots.size == 1 and e.is_open((0, 0, 0), (1, 0, 0))
    f = cl.build_clusters(e)
    assert f.sizes[f.label_of((0, 0, 0))] == 2
    assert f.n_components == W.n_sites - 1
    assert tuple(cl.finite_cluster_extent(f)) == (2, 1, False)
    assert tuple(cl.finite_cluster_extent(cl.build_clusters(cl.open_edges(ONE_LOOP, 0.4)))) == (1, 0, False)


def test_fully_open_box():
    f = cl.build_clusters(cl.full_edge_set(W))
    assert f.n_components == 1 and f.sizes.max() == 7 ** 3
    assert cl.one_arm(f, 3, margin=0)
    assert cl.finite_cluster_extent(f).touches_window_boundary


def test_union_find_equals_bfs():
    for r, alpha in enumerate((2.0, 8.0, 15.0)):
        s = _soup(alpha, 4, Window.around(10, 3), r)
        e = cl.open_edges(s)
        assert np.array_equal(cl.build_clusters(e).labels, cl.bfs_clusters(e))


def test_component_sizes_sum_to_sites():
    f = cl.build_clusters(cl.open_edges(_soup(9.0)))
    assert f.sizes.sum() == W.n_sites


def test_one_arm_monotone_in_alpha():
    s = _soup(20.0, 2, Window.around(5, 3))
    arms = [cl.one_arm(cl.build_clusters(cl.open_edges(s, a)), 4) for a in np.linspace(0, 20, 21)]
    assert arms == sorted(arms)
    assert not arms[0]


def test_margin_rule():
    f = cl.build_clusters(cl.open_edges(_soup(3.0, 4)))
    assert f.reach == 2
    with pytest.raises(cl.MarginError):
        cl.one_arm(f, 2)
    cl.one_arm(f, 1)


def test_censoring_soundness_on_nested_windows():
    big = Window.around(8, 3)
    for r in range(20):
        s = _soup(9.0, 4, big.with_margin(2), r, seed=12)
        small = cl.build_clusters(cl.open_edges(s, window=Window.around(4, 3)))
        ext = cl.finite_cluster_extent(small)
        if not ext.touches_window_boundary:
            ext2 = cl.finite_cluster_extent(cl.build_clusters(cl.open_edges(s, window=big)))
            assert (ext.size, ext.radius) == (ext2.size, ext2.radius)


def test_slab_crossing():
    slab = Slab(2, 3)
    w = slab.window(6)
    empty = SoupRealization.empty(3, 1.0, window=w)
    assert not cl.slab_crossing(cl.build_clusters(cl.open_edges(empty)), slab, 6)
    assert cl.slab_crossing(cl.build_clusters(cl.open_edges(edge_soup(w))), slab, 6)
    with pytest.raises(ValueError):
        cl.slab_crossing(cl.build_clusters(cl.full_edge_set(W)), slab, 6)


def test_connection_time_matches_one_arm():
    w = Window.around(5, 3)
    s = _soup(25.0, 2, w, 1)
    far = np.flatnonzero(np.abs(w.sites()).max(axis=1) >= 5)
    t = cl.connection_time(s, w, w.index(np.zeros((1, 3), np.int64)), far)
    for a in np.linspace(0, 25, 26):
        assert cl.one_arm(cl.build_clusters(cl.open_edges(s, a)), 5, margin=0) == (t <= a)


def test_kappa_times_monotone():
    s = _soup(8.0, 6, replica=2)
    e0 = cl.open_edges(s, 8.0, kappa=0.0)
    e1 = cl.open_edges(s, 8.0, kappa=0.5)
    assert e1.issubset(e0)


def test_cluster_csv(tmp_path):
    f = cl.build_clusters(cl.open_edges(ONE_LOOP))
    row = cl.cluster_summary(f, 0, 1.0, 2)
    p = cl.write_cluster_csv(tmp_path / "c.csv", [row])
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cl.CLUSTER_CSV_COLUMNS
    assert rows[1][4] == "2"
