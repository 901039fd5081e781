from __future__ import annotations

import io
import math

import numpy as np
import pytest

from loopsoup import clusters as cl
from loopsoup.lattice import OPEN_TAIL, Box, Window
from loopsoup.loop_model import IntensityFunction, LoopError, mass_table
from loopsoup.sampler import (SoupRealization, base_points, edge_soup, restrict, sample_truncated,
                              sample_window, split_by_length)

W1 = Window.around(1, 3)


def _truncated(alpha, m, replica, w=W1, seed=11, **kw):
    return sample_truncated(w, IntensityFunction(alpha, 0.0, m), alpha, seed, replica, **kw)


def test_zero_alpha_is_empty():
    assert len(_truncated(0.0, 4, 0)) == 0
    assert len(sample_window(Window.around(3, 3), Box.at_origin(1, 3), 0.0)) == 0


def test_edge_loop_counts_are_poisson():
    # interior edge {0, e1}: loop count ~ Poisson(alpha / 36)
    R, alpha = 10_000, 3.6
    e = np.zeros(R)
    tot = np.zeros(R)
    for r in range(R):
        s = _truncated(alpha, 2, r)
        p = s.points.reshape(-1, 2, 3)
        on = ((p == [0, 0, 0]).all(axis=2) | (p == [1, 0, 0]).all(axis=2)).sum(axis=1) == 2
        e[r] = on.sum()
        tot[r] = len(s)
    assert abs(e.mean() - 0.1) < 3 * math.sqrt(0.1 / R)
    mean = alpha * mass_table(W1, K_max=2, kappa=0.0).mass(2)
    assert abs(tot.mean() - mean) < 3 * math.sqrt(mean / R)
    assert 0.9 < tot.var(ddof=1) / tot.mean() < 1.1


def test_window_sampler_matches_truncated_on_length_two():
    R, alpha = 10_000, 3.0
    box = Box.at_origin(0, 3)
    amb = Window.around(2, 3, boundary_mode=OPEN_TAIL)
    a = np.array([len(sample_window(amb, box, alpha, 0.0, 2, 5, r)) for r in range(R)])
    b = np.empty(R)
    for r in range(R):
        s = _truncated(alpha, 2, r, seed=6)
        b[r] = (np.abs(s.points).max(axis=1) == 0).reshape(-1, 2).any(axis=1).sum()
    top = int(max(a.max(), b.max())) + 1
    tv = 0.5 * np.abs(np.bincount(a, minlength=top) - np.bincount(b.astype(int), minlength=top)).sum() / R
    assert tv <= 0.02


def test_window_sampler_loops_visit_box():
    box = Box.at_origin(1, 3)
    s = sample_window(Window.around(6, 3, boundary_mode=OPEN_TAIL), box, 2.0, 0.0, 16, 3, 0)
    assert len(s) > 0
    inside = box.contains(s.points)
    assert np.logical_or.reduceat(inside, s.offsets[:-1]).all()
    bp = base_points(s)
    assert box.contains(bp.sites).all() and (bp.site_rates >= 0).all()
    assert s.tail_mass_epsilon > 0


def test_window_sampler_rejects_misconfiguration():
    with pytest.raises(ValueError):
        sample_window(Window.around(1, 3), Box.at_origin(2, 3), 1.0)
    with pytest.raises(ValueError):
        sample_window(Window.around(3, 3), Box.at_origin(1, 3), 1.0, K_max=5)


def test_absorbing_loops_stay_inside_and_are_valid():
    w = Window.around(3, 3)
    for method in ("kernel", "thinning"):
        s = sample_truncated(w, IntensityFunction(4.0, 0.0, 8), 4.0, 2, 0, method=method)
        assert w.contains(s.points).all()
        s.loops()  # validates every loop
        assert (s.lengths % 2 == 0).all() and s.lengths.max() <= 8


def test_kernel_and_thinning_agree():
    R, alpha, m = 3000, 2.0, 6
    w = Window((0, 0, 0), (2, 2, 1))
    c = {}
    for method in ("kernel", "thinning"):
        counts = np.zeros((R, m // 2))
        for r in range(R):
            s = sample_truncated(w, IntensityFunction(alpha, 0.0, m), alpha, 4, r, method=method)
            counts[r] = np.bincount(s.lengths // 2 - 1, minlength=m // 2)[: m // 2]
        c[method] = counts
    expect = alpha * mass_table(w, K_max=m, kappa=0.0).masses
    for counts in c.values():
        assert np.all(np.abs(counts.mean(axis=0) - expect) < 4 * np.sqrt(expect / R))


def test_restrict_and_coupling():
    s = _truncated(5.0, 4, 0, w=Window.around(3, 3))
    assert len(restrict(s, 0.0)) == 0
    assert len(restrict(s, 5.0)) == len(s)
    with pytest.raises(ValueError):
        restrict(s, 6.0)
    prev = None
    for a in (0.5, 1.0, 2.5, 5.0):
        e = cl.open_edges(s, a)
        if prev is not None:
            assert prev.issubset(e)
        prev = e


def test_split_by_length_partition():
    s = _truncated(4.0, 6, 1, w=Window.around(2, 3))
    short, long_ = split_by_length(s, 2)
    assert len(short) + len(long_) == len(s)
    assert (short.lengths <= 2).all() and (long_.lengths > 2).all()
    full, empty = split_by_length(s, 6)
    assert len(full) == len(s) and len(empty) == 0
    t = _truncated(4.0, 2, 1)
    assert len(split_by_length(t, 2)[1]) == 0
    with pytest.raises(ValueError):
        split_by_length(s, 1)


def test_split_parts_uncorrelated():
    R = 10_000
    a, b = np.empty(R), np.empty(R)
    for r in range(R):
        short, long_ = split_by_length(_truncated(3.0, 4, r, seed=8), 2)
        a[r], b[r] = len(short), len(long_)
    assert abs(np.corrcoef(a, b)[0, 1]) < 3 / math.sqrt(R)


def test_ndjson_round_trip():
    s = _truncated(3.0, 6, 0, w=Window.around(2, 3))
    text = s.to_ndjson()
    t = SoupRealization.from_ndjson(text, alpha_max=3.0)
    assert np.array_equal(s.points, t.points) and np.array_equal(s.arrivals, t.arrivals)
    buf = io.StringIO()
    s.to_ndjson(buf, meta={"replica": 0})
    assert len(SoupRealization.from_ndjson(buf.getvalue())) == len(s)


def test_ndjson_rejects_bad_entries():
    with pytest.raises(LoopError):
        SoupRealization.from_ndjson('{"arrival": 0.1, "len": 3, "pts": [[0,0,0],[1,0,0]]}\n')
    with pytest.raises(LoopError):
        SoupRealization.from_ndjson('{"arrival": 0.1, "len": 2, "pts": [[0,0,0],[2,0,0]]}\n')


def test_edge_soup_opens_every_edge():
    w = Window.around(2, 3)
    e = cl.open_edges(edge_soup(w))
    assert np.array_equal(e.slots, w.edge_slots())


def test_reproducible_streams():
    a = _truncated(2.0, 4, 7, w=Window.around(2, 3))
    b = _truncated(2.0, 4, 7, w=Window.around(2, 3))
    c = _truncated(2.0, 4, 8, w=Window.around(2, 3))
    assert np.array_equal(a.points, b.points) and not np.array_equal(a.arrivals, c.arrivals)
