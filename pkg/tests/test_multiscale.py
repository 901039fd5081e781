from __future__ import annotations

import numpy as np
import pytest

from loopsoup import multiscale as ms
from loopsoup.clusters import MarginError
from loopsoup.lattice import ABSORBING, Box, Window
from loopsoup.sampler import SoupRealization, edge_soup

SC = ms.ScaleSequence(2, 1, 3, levels=1)  # L0 = 3, L1 = 6
K = 1
LO, HI = -2 * SC.L(1), (K + 2) * SC.L(1)


def h_window(d: int = 2) -> Window:
    return Window(np.full(d, LO - SC.L0 - 1), np.full(d, HI + SC.L0), ABSORBING)


def field(good0) -> ms.GoodnessField:
    return ms.recurse_goodness(np.asarray(good0, bool), SC, (LO, LO), 1.0, 1)


def test_scales_and_constraints():
    sc = ms.ScaleSequence(4, 2, 5, levels=2)
    assert [sc.l(n) for n in range(3)] == [4, 16, 64]
    assert [sc.r(n) for n in range(3)] == [2, 4, 8]
    assert [sc.L(n) for n in range(3)] == [5, 20, 320]
    c = sc.constraints(0.5, 3)
    assert not c["ratio_satisfied"] and c["r0_over_l0"] == 0.5
    assert c["theta_L0d"] == pytest.approx(62.5) and not c["theta_L0d_satisfied"]
    with pytest.raises(ValueError):
        ms.ScaleSequence(3, 2, 5)
    with pytest.raises(OverflowError):
        ms.ScaleSequence(2 ** 20, 1, 2 ** 20, levels=3)


def test_is_seed():
    w = Window.around(3, 2)
    box = Window.around(1, 2)
    assert ms.is_seed(Window.around(0, 2), SoupRealization.empty(2, 1.0, window=w), 1.0)
    assert not ms.is_seed(box, SoupRealization.empty(2, 1.0, window=w), 1.0)
    full = edge_soup(w, arrival=0.5)
    assert ms.is_seed(box, full, 1.0)
    assert not ms.is_seed(box, full, 0.25)


def test_classify_open_and_empty():
    w = h_window()
    g = ms.classify_good(edge_soup(w), SC, 1.0, (LO, LO), (HI, HI), levels=1)
    assert g.good[0].all() and g.good[1].all()
    assert g.good[0].shape == (10, 10)
    g = ms.classify_good(SoupRealization.empty(2, 1.0, window=w), SC, 1.0, (LO, LO), (HI, HI), levels=1)
    assert not g.good[0].any()
    with pytest.raises(ValueError):
        ms.classify_good(edge_soup(w), SC, 0.0, (LO, LO), (HI, HI))
    with pytest.raises(MarginError):
        ms.classify_good(edge_soup(w), SC, 1.0, (LO - 3, LO), (HI, HI))


def test_recursion_rules_and_monotonicity():
    good = np.ones((10, 10), bool)
    assert field(good).good[1].all()
    one = good.copy()
    one[2, 2] = False
    assert field(one).good[1].all()
    two = one.copy()
    two[3, 3] = False  # same L1-cell, sup-distance 1 = r0
    f2 = field(two)
    assert not f2.is_good(1, (LO + 6, LO + 6))
    assert f2.good[1].sum() == f2.good[1].size - 1
    rng = np.random.default_rng(0)
    for _ in range(20):
        g0 = rng.random((10, 10)) < 0.8
        more = g0 | (rng.random((10, 10)) < 0.3)
        assert field(g0).leq(field(more))


def test_frame():
    good = np.ones((10, 10), bool)
    full = ms.build_frame(field(good), K, 1)
    assert len(full) == 100
    one = good.copy()
    one[2, 2] = False  # vertex (-6, -6); its L1-cell is [-6, 0)^2
    fr = ms.build_frame(field(one), K, 1)
    removed = {tuple(v) for v in full.tolist()} - {tuple(v) for v in fr.tolist()}
    assert removed == {(-6, -6), (-6, -3), (-3, -6), (-3, -3)}
    edge = good.copy()
    edge[3, 3] = False  # vertex (-3, -3): the removal is clipped to its L1-cell
    removed = {tuple(v) for v in full.tolist()} - {tuple(v) for v in ms.build_frame(field(edge), K, 1).tolist()}
    assert removed == {(-3, -3)}
    rng = np.random.default_rng(1)
    for _ in range(20):
        g0 = rng.random((10, 10)) < 0.8
        more = g0 | (rng.random((10, 10)) < 0.3)
        a = {tuple(v) for v in ms.build_frame(field(g0), K, 1).tolist()}
        b = {tuple(v) for v in ms.build_frame(field(more), K, 1).tolist()}
        assert a <= b <= {tuple(v) for v in full.tolist()}


def test_h_event_open_and_empty():
    w = h_window()
    rep = ms.check_H_event(edge_soup(w), 4, SC, K, 1, 1.0, 1.0)
    assert (rep.a, rep.b, rep.c) == (True, True, True)
    assert rep.proxy["infinity_proxy"] == ms.INFINITY_PROXY
    assert '"a": true' in rep.to_json()
    rep = ms.check_H_event(SoupRealization.empty(2, 1.0, window=w), 4, SC, K, 1, 1.0, 1.0)
    assert rep.a is False and rep.b and rep.c


def test_h_event_b_fails_on_detour():
    # a comb whose teeth are only joined far away: a) is irrelevant, b) must fail
    w = h_window()
    u, ax = w.edges()
    pts = w.point(u)
    spine = (ax == 0) & (pts[:, 1] == LO - SC.L0 - 1)
    teeth = (ax == 1) & (pts[:, 0] % 2 == 0)
    s = edge_soup(w, (u[spine | teeth], ax[spine | teeth]))
    rep = ms.check_H_event(s, 4, SC, K, 1, 1.0, 1.0)
    assert not rep.b and rep.b_failures > 0


def test_h_event_margin():
    w = Window(np.full(2, LO), np.full(2, HI), ABSORBING)
    with pytest.raises(MarginError):
        ms.check_H_event(edge_soup(w), 4, SC, K, 1, 1.0, 1.0)


def test_regular_ball_small_graphs():
    path = ms.ClusterGraph.from_sites([(x, 0, 0) for x in range(9)])
    assert ms.check_regular_ball(path, (4, 0, 0), 4).verdict == "not regular"
    single = ms.ClusterGraph.from_sites([(0, 0, 0)])
    assert ms.check_regular_ball(single, (0, 0, 0), 1, C_V=1).verdict == "regular"
    assert ms.check_regular_ball(single, (0, 0, 0), 1, C_V=1.5).verdict == "not regular"
    with pytest.raises(ValueError):
        ms.check_regular_ball(path, (4, 0, 0), 5)
    with pytest.raises(ValueError):
        ms.check_regular_ball(path, (4, 0, 0), 1, mode="heuristic")


def test_regular_ball_cube():
    cube = ms.ClusterGraph.from_sites(Box.at_origin(1, 3).sites())
    ex = ms.check_regular_ball(cube, (0, 0, 0), 1, C_W=3, cap=27)
    assert ex.candidate_size == 27 and ex.expansion == pytest.approx(1.0)
    assert ex.verdict == "regular"
    bd = ms.check_regular_ball(cube, (0, 0, 0), 1, C_W=3, mode="bound")
    assert bd.expansion >= ex.expansion
    assert bd.verdict == "consistent-with-regular"
    with pytest.raises(ValueError):
        ms.check_regular_ball(cube, (0, 0, 0), 1, C_W=3)
