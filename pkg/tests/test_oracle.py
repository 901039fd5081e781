from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from loopsoup import oracle
from loopsoup.oracle import (TinyWindow, all_closed_probabilities, based_loops_by_edge_set, closed_probability,
                             derivative_comparison, edge_state_law, exact_theta, pivotal_derivative,
                             russo_derivative, series_mass, theta_inclusion_exclusion, total_mass)

TWO = TinyWindow([(0, 0, 0), (1, 0, 0)], name="two")
PATH = TinyWindow([(0, 0, 0), (1, 0, 0), (2, 0, 0)], name="path")


def test_total_mass_examples():
    assert total_mass(TWO) == pytest.approx(math.log(36 / 35), abs=1e-14)
    assert total_mass(PATH) == pytest.approx(math.log(18 / 17), abs=1e-14)
    heavy = TinyWindow(TWO.sites, kappa=1e6)
    assert total_mass(heavy) < 1e-12


def test_series_against_logdet_on_corpus():
    for w in oracle.tiny_corpus():
        K = 40
        s, rem = series_mass(w, K)
        assert abs(total_mass(w) - s) <= rem + 1e-13


def test_closed_probability_examples():
    assert closed_probability(PATH, [], 1.0) == 1.0
    assert closed_probability(TWO, [0], 1, exact=True) == Fraction(35, 36)
    assert closed_probability(PATH, [0], 1, exact=True) == Fraction(34, 35)
    assert closed_probability(PATH, [0], 1.0) == pytest.approx(34 / 35, abs=1e-14)


def test_kernel_zeroing_matches_loop_enumeration():
    # mass of loops avoiding S, by walk enumeration vs traces of the zeroed kernel
    for w in (oracle.tiny_corpus()[2], oracle.tiny_corpus()[4]):
        for S in ([0], [1, 2]):
            Smask = sum(1 << e for e in S)
            K = w.kernel_without(S)
            for k in range(2, 11, 2):
                enum = sum(v for m, v in based_loops_by_edge_set(w, k).items() if not m & Smask)
                trace = np.trace(np.linalg.matrix_power(K, k)) / k
                assert enum == pytest.approx(trace, abs=1e-15)


def test_exact_theta_examples():
    assert exact_theta(PATH, 0, 2, 0.0) == 0.0
    assert exact_theta(PATH, 0, 2, 1, exact=True) == Fraction(1, 630)
    assert exact_theta(PATH, 0, 2, 1.0) == pytest.approx(1 / 630, abs=1e-12)
    assert exact_theta(PATH, 0, [0, 2], 1.0) == 1.0


def test_edge_state_law_atoms():
    for w in oracle.tiny_corpus():
        law = edge_state_law(w, 3.0)
        assert abs(law.total() - 1) <= 1e-10
        assert (law.atoms >= -1e-12).all()


def test_inclusion_exclusion_matches_atoms():
    for w in oracle.tiny_corpus():
        o, t = oracle.corpus_pair(w)
        for a in (0.5, 2.0, 7.0):
            assert theta_inclusion_exclusion(w, o, t, a) == pytest.approx(exact_theta(w, o, t, a),
                                                                           abs=oracle.ATOM_TOL)


def test_all_closed_probabilities_consistent():
    g = all_closed_probabilities(PATH, 2.0)
    assert g[0] == pytest.approx(1.0)
    assert g[0b11] == pytest.approx(closed_probability(PATH, [0, 1], 2.0))


def test_russo_examples():
    a = 2.5
    # a global multiplier on every length reproduces d/dbeta of 1 - (35/36)^(alpha beta)
    assert russo_derivative(TWO, 0, 1, a, None) == pytest.approx(a * math.log(36 / 35) * (35 / 36) ** a,
                                                                  rel=1e-7)
    # the length-2 multiplier alone only scales the single edge loop
    assert russo_derivative(TWO, 0, 1, a, 1) == pytest.approx(a / 36 * (35 / 36) ** a, rel=1e-7)
    # no loop of length 2 in a window without edges
    sparse = TinyWindow([(0, 0, 0), (2, 0, 0)])
    assert russo_derivative(sparse, 0, 1, a, 1) == 0.0


def test_finite_difference_matches_pivotal_sum():
    for i in (1, 2, 3):
        fd = russo_derivative(PATH, 0, 2, 1.5, i)
        piv = pivotal_derivative(PATH, 0, 2, 1.5, i)
        assert fd == pytest.approx(piv, abs=1e-6)
    sq = oracle.tiny_corpus()[2]
    assert russo_derivative(sq, 0, 3, 2.0, 2) == pytest.approx(pivotal_derivative(sq, 0, 3, 2.0, 2), abs=1e-6)


def test_derivative_comparison():
    lhs, rhs, ratio = derivative_comparison(TWO, 0, 1, 2.0, 1, 1)
    assert ratio == 1.0
    lhs, rhs, ratio = derivative_comparison(TWO, 0, 1, 2.0, 1, 2)
    assert 0 < rhs and math.isfinite(ratio)
    with pytest.raises(ValueError):
        derivative_comparison(TinyWindow([(0, 0, 0), (2, 0, 0)]), 0, 1, 1.0, 1, 2)


def test_caps_and_guards():
    with pytest.raises(ValueError):
        TinyWindow([(k, 0, 0) for k in range(13)])
    with pytest.raises(ValueError):
        TinyWindow([(0, 0, 0), (0, 0, 0)])


def test_validate_corpus_and_golden():
    t = time.perf_counter()
    checks = oracle.validate_corpus()
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]
    assert any("golden" in c.name for c in checks)
    assert time.perf_counter() - t < 5


def test_golden_file_is_current():
    assert oracle.load_golden().keys() == oracle.golden_values().keys()
