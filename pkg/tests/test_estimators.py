from __future__ import annotations

import math

import numpy as np
import pytest

from loopsoup import estimators as est
from loopsoup.clusters import MarginError


def test_estimate_basics():
    e = est.Estimate.from_samples([0, 1, 1, 0], seed=3)
    assert e.value == 0.5 and e.replicas == 4 and e.seed == 3
    lo, hi = e.ci()
    assert lo < 0.5 < hi
    with pytest.raises(ValueError):
        est.Estimate.from_samples([1.0], seed=0)
    p, lo, hi = est.proportion_ci(0, 10)
    assert p == lo == hi == 0.0


def test_run_replicas_order_independent_of_workers():
    args = [(float(x),) for x in range(6)]
    assert est.run_replicas(math.sqrt, args, 1) == est.run_replicas(math.sqrt, args, 2)


def test_theta_n_zero_and_one_step():
    # at n = 1 the origin reaches dB(1) iff one of its six edges is open
    grid = [0.0, 3.0, 6.0]
    ests = est.theta_n(grid, m=2, n=1, replicas=4000, seed=11)
    assert ests[0].value == 0.0
    for a, e in zip(grid[1:], ests[1:]):
        exact = 1 - math.exp(-6 * a / 36)
        assert abs(e.value - exact) < 4 * math.sqrt(exact * (1 - exact) / e.replicas)
    assert ests[1].value <= ests[2].value


def test_theta_n_rejects_odd_cutoffs():
    with pytest.raises(ValueError):
        est.theta_n([1.0], m=3)
    with pytest.raises(ValueError):
        est.theta_n([1.0], m=None, K_max=5)


def test_crossing_monotone_per_replica():
    model = est.CrossingModel("bulk", m=2)
    for r in range(20):
        hits = [est.crossing_event(model, a, 4, seed=2, replica=r) for a in (4.0, 8.0, 16.0, 40.0)]
        assert hits == sorted(hits)
    kmodel = est.CrossingModel("bulk", m=2, alpha=20.0)
    for r in range(20):
        hits = [est.crossing_event(kmodel, k, 4, seed=2, replica=r, over="kappa") for k in (0.0, 0.2, 1.0)]
        assert hits == sorted(hits, reverse=True)


def test_crossing_model_validation():
    with pytest.raises(ValueError):
        est.CrossingModel("bulk", m=3)
    with pytest.raises(ValueError):
        est.CrossingModel("slab", m=2)
    with pytest.raises(ValueError):
        est.CrossingModel("torus")


def test_bernoulli_square_threshold_near_half():
    br = est.find_alpha_c(est.CrossingModel("bernoulli", d=2), n=8, tol=0.05, seed=1)
    assert br.ci_separated
    assert 0.35 < br.mid < 0.65


def test_bond_alpha_conversion():
    for p in (0.01, 0.2, 0.5):
        assert est.bond_from_alpha(est.alpha_from_bond(p)) == pytest.approx(p, rel=1e-12)
    assert est.alpha_from_bond(1 - math.exp(-1)) == pytest.approx(36.0)


def test_kappa_c_collapses_to_zero_below_threshold():
    (br,) = est.kappa_c_curve([2.0], m=2, n=4, replicas=100, seed=0)
    assert br.lo == 0.0 and "reported as zero" in br.flags


def test_fit_tail_exact_slope_and_flags():
    radii = [2, 4, 6, 8, 10, 12]
    trials = [10 ** 8] * 6
    counts = [round(1e8 * math.exp(-0.5 * r)) for r in radii]
    fit = est.fit_tail(radii, counts, trials)
    assert fit.slope == pytest.approx(-0.5, abs=1e-4)
    assert fit.conclusive and not fit.flags
    zero = est.fit_tail(radii, [0] * 6, trials)
    assert not zero.conclusive
    sparse = est.fit_tail(radii, [100, 50, 20, 5, 1, 0], [1000] * 6)
    assert not sparse.conclusive and any("dropped" in f for f in sparse.flags)


def test_tail_fit_guards():
    assert not est.tail_fit(0.0, radii=(2, 3)).conclusive
    with pytest.raises(ValueError):
        est.tail_fit(1.0, mode="bulk")
    with pytest.raises(MarginError):
        est.tail_fit(1.0, radii=(2, 8), window_radius=6)


def test_truncation_convergence_monotone():
    t = est.theta_L_convergence(8.0, n=2, Ls=(2,), K_max=4, replicas=60, seed=5)
    assert t.monotone_per_replica
    assert t.diff_at(4).diff == 0.0
    assert t.diff_at(2).diff >= 0.0


def test_mean_finite_cluster_at_zero_intensity():
    r = est.mean_finite_cluster(0.0, window_radius=3, replicas=10)
    assert r.censored == 0
    assert r.estimate.value == 1.0 and r.estimate.stderr == 0.0


def test_big_box_connect_extremes():
    empty = est.big_box_connect(0.0, ns=(1, 2), replicas=10)
    assert all(e.value == 0.0 for e in empty.estimates)
    full = est.big_box_connect(400.0, ns=(1,), replicas=10)
    assert full.estimates[0].value == 1.0 and full.flags


def test_annulus_mass_ratio_is_a_fraction():
    m2, m4, ratio = est.annulus_mass_ratio(1, 3)
    assert 0 < m4 < m2 and ratio == pytest.approx(m4 / m2)
