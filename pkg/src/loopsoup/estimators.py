"""Monte Carlo experiments on loop-soup percolation.

Every experiment runs replicas on independent counter-based streams keyed by
``(seed, purpose, replica, ...)``, so results do not depend on scheduling and
any replica can be re-run alone.  Sweeps over alpha, kappa or the length
cutoff reuse one realization per replica through the arrival-time coupling,
which makes monotone events monotone per replica, not only on average.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import clusters as cl
from . import rng as rngmod
from .lattice import ABSORBING, OPEN_TAIL, Box, Slab, Window, cube_corner_window
from .loop_model import IntensityFunction, one_loop_connection_mass
from .sampler import SoupRealization, sample_truncated, sample_window

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
EDGE_MASS_M2 = 1.0 / 36.0  # mass of the length-2 loops on one edge of Z^3


class InconsistencyFlag(RuntimeError):
    """Raised (or recorded) when estimates contradict a monotonicity the model guarantees."""


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    replicas: int
    seed: int
    epsilon_tail: float = 0.0

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError("an estimate needs at least two replicas")

    @classmethod
    def from_samples(cls, x, seed: int, epsilon_tail: float = 0.0) -> "Estimate":
        x = np.asarray(x, dtype=float)
        if x.size < 2:
            raise ValueError("an estimate needs at least two replicas")
        return cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size),
                   int(seed), float(epsilon_tail))

    def ci(self, z: float = Z95) -> tuple[float, float]:
        return self.value - z * self.stderr, self.value + z * self.stderr

    def comparable(self, other: "Estimate", tol: float) -> bool:
        """Whether the two tail errors differ by at most ``tol`` (a precondition for comparing)."""
        return abs(self.epsilon_tail - other.epsilon_tail) <= tol


def proportion_ci(k: int, n: int, z: float = Z95) -> tuple[float, float, float]:
    """Point estimate, and normal-approximation CI, of a binomial proportion."""
    p = k / n
    se = math.sqrt(max(p * (1 - p), 0.0) / n)
    return p, p - z * se, p + z * se


def run_replicas(fn: Callable, args: Sequence[tuple], workers: int = 1) -> list:
    """``[fn(*a) for a in args]``, optionally across processes (order preserved)."""
    if workers <= 1 or len(args) < 2:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * workers))))


def derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(keys)).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# one-arm probabilities

def _arm_time(alpha_max: float, kappa: float, m: int | None, n: int, seed: int, replica: int,
              K_max: int | None) -> tuple[float, float]:
    d = 3
    if m is not None:
        W = Window.around(n + m // 2, d)
        s = sample_truncated(W, IntensityFunction(alpha_max, kappa, m), alpha_max, seed, replica)
        edges_w = W
    else:
        box = Box.at_origin(n, d)
        amb = Window.around(n + K_max // 2, d, boundary_mode=OPEN_TAIL)
        s = sample_window(amb, box, alpha_max, kappa, K_max, seed, replica)
        edges_w = Window.from_box(box)
    sites = edges_w.sites()
    origin = edges_w.index(np.zeros((1, d), np.int64))
    far = np.flatnonzero(np.abs(sites).max(axis=1) >= n)
    return cl.connection_time(s, edges_w, origin, far), s.tail_mass_epsilon


def theta_n(alpha_grid: Sequence[float], kappa: float = 0.0, m: int | None = 2, n: int = 4,
            replicas: int = 1000, seed: int = 0, K_max: int | None = None,
            workers: int = 1) -> list[Estimate]:
    """``P[0 <-> dB(n)]`` at each alpha of the grid, on shared realizations (d = 3).

    ``m`` selects the length-m truncated soup on ``B(n + m/2)``; ``m=None``
    uses the window sampler on ``B(n)`` with lengths up to ``K_max``.
    """
    grid = np.asarray(alpha_grid, dtype=float)
    if m is None and (K_max is None or K_max % 2):
        raise ValueError("window mode needs an even K_max")
    if m is not None and m % 2:
        raise ValueError("m must be even")
    amax = float(grid.max())
    out = run_replicas(_arm_time, [(amax, kappa, m, n, seed, r, K_max) for r in range(replicas)], workers)
    times = np.array([t for t, _ in out])
    eps = max((e for _, e in out), default=0.0)
    return [Estimate.from_samples(times <= a, seed, eps) for a in grid]


# ---------------------------------------------------------------------------
# crossing models and thresholds

@dataclass(frozen=True)
class CrossingModel:
    """Face-to-face crossing of ``[0, n]^d`` (bulk, Bernoulli) or of a slab window.

    ``bulk``: length-m soup on the cube plus an m/2 margin, edges of the cube.
    ``slab``: loops of length <= m inside ``[0, n]^2 x [0, width]^(d-2)``.
    ``bernoulli``: independent bonds; the swept parameter is the bond probability.
    """

    kind: str = "bulk"
    m: int = 2
    d: int = 3
    width: int | None = None
    kappa: float = 0.0
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("bulk", "slab", "bernoulli"):
            raise ValueError(f"unknown crossing model {self.kind!r}")
        if self.m < 2 or self.m % 2:
            raise ValueError("m must be a positive even integer")
        if self.kind == "slab" and (self.width is None or self.width < 1):
            raise ValueError("slab model needs a positive width")

    def describe(self) -> dict:
        return asdict(self)


def crossing_event(model: CrossingModel, param: float, n: int, seed: int, replica: int,
                   over: str = "alpha") -> bool:
    """One replica of the crossing event at ``alpha = param`` (or ``kappa = param``)."""
    d = model.d
    if model.kind == "bernoulli":
        cube = cube_corner_window(n, d)
        g = rngmod.stream(seed, rngmod.PROBE, replica, 0)
        slots = cube.edge_slots()
        e = cl.OpenEdgeSet(cube, slots[g.random(slots.size) < param])
        return cl.box_crossing(cl.build_clusters(e), 0)
    if over == "alpha":
        alpha, kappa = param, model.kappa
    else:
        alpha, kappa = model.alpha, param
    if model.kind == "bulk":
        cube = cube_corner_window(n, d)
        W = cube.with_margin(model.m // 2)
        s = sample_truncated(W, IntensityFunction(alpha, kappa, model.m), alpha, seed, replica)
        f = cl.build_clusters(cl.open_edges(s, window=cube))
        return cl.box_crossing(f, 0)
    slab = Slab(model.width, d)
    W = slab.window(n)
    s = sample_truncated(W, IntensityFunction(alpha, kappa, model.m), alpha, seed, replica)
    return cl.slab_crossing(cl.build_clusters(cl.open_edges(s)), slab, n)


@dataclass
class Probe:
    param: float
    successes: int
    replicas: int

    @property
    def p(self) -> float:
        return self.successes / self.replicas

    @property
    def stderr(self) -> float:
        return math.sqrt(max(self.p * (1 - self.p), 0.0) / self.replicas)

    def side(self, c_star: float, z: float = Z95) -> int:
        """-1 / +1 when the CI lies below / above ``c_star``, 0 when it straddles."""
        if self.p + z * self.stderr < c_star:
            return -1
        if self.p - z * self.stderr > c_star:
            return 1
        return 0


@dataclass
class ThresholdBracket:
    lo: float
    hi: float
    c_star: float
    n: int
    criterion: str
    parameter: str = "alpha"
    probes: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    ci_separated: bool = False
    seed: int = 0
    model: dict = field(default_factory=dict)

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def below(self, other: "ThresholdBracket") -> bool:
        """Disjoint brackets with this one entirely to the left."""
        return self.ci_separated and other.ci_separated and self.hi < other.lo

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probes"] = [asdict(p) for p in self.probes]
        return d


def _probe(model: CrossingModel, param: float, n: int, seed: int, start: int, count: int,
           over: str, workers: int) -> int:
    hits = run_replicas(crossing_event, [(model, param, n, seed, r, over)
                                         for r in range(start, start + count)], workers)
    return int(sum(hits))


def _monotone_violations(probes: list[Probe], increasing: bool, z: float = Z95) -> list[str]:
    out = []
    ps = sorted(probes, key=lambda p: p.param)
    for i, a in enumerate(ps):
        for b in ps[i + 1:]:
            gap = (a.p - b.p) if increasing else (b.p - a.p)
            if gap > z * math.hypot(a.stderr, b.stderr) and b.param > a.param:
                out.append(f"non-monotone: p({a.param:.4g})={a.p:.3f} vs p({b.param:.4g})={b.p:.3f}")
    return out


def bisect_threshold(model: CrossingModel, n: int, lo: float, hi: float, c_star: float = 0.5,
                     tol: float = 0.1, replicas: int = 250, max_replicas: int = 1000,
                     seed: int = 0, over: str = "alpha", max_probes: int = 40,
                     floor: float | None = None, workers: int = 1) -> ThresholdBracket:
    """CI-aware bisection of the crossing probability against ``c_star``.

    Each probe uses fresh replicas (probe j draws on replica block j).  A probe
    whose 95% CI straddles ``c_star`` is re-run with doubled replicas up to
    ``max_replicas``; if it still straddles, the bracket is returned as is,
    with a flag.  The crossing probability increases in alpha (and in the
    bond probability) and decreases in kappa.
    """
    increasing = over != "kappa"
    sign = 1 if increasing else -1
    block = 1 << 20
    probes: list[Probe] = []
    flags: list[str] = []
    counter = [0]

    def evaluate(x: float) -> int:
        j = counter[0]
        counter[0] += 1
        R = replicas
        hits = _probe(model, x, n, seed, j * block, R, over, workers)
        pr = Probe(x, hits, R)
        while pr.side(c_star) == 0 and pr.replicas < max_replicas:
            extra = min(pr.replicas, max_replicas - pr.replicas)
            hits = _probe(model, x, n, seed, j * block + pr.replicas, extra, over, workers)
            pr = Probe(x, pr.successes + hits, pr.replicas + extra)
        probes.append(pr)
        return pr.side(c_star) * sign

    # the low end must sit CI-below c* and the high end CI-above (in parameter direction)
    s_lo = evaluate(lo)
    s_hi = None
    while s_lo >= 0 and len(probes) < max_probes:
        if s_lo > 0:
            hi, s_hi = lo, s_lo
        new = lo / 2 if floor is None else max(floor, lo / 2)
        if new == lo:
            break
        lo = new
        s_lo = evaluate(lo)
    if s_hi is None:
        s_hi = evaluate(hi)
    while s_hi <= 0 and s_lo < 0 and len(probes) < max_probes:
        if s_hi < 0:
            lo = hi
        hi = 2 * hi
        s_hi = evaluate(hi)
    br = ThresholdBracket(lo, hi, c_star, n, f"crossing probability at scale {n} vs c*={c_star}",
                          over, probes, flags, seed=seed, model=model.describe())
    if s_lo >= 0 or s_hi <= 0:
        flags.append("could not establish a CI-separated initial bracket")
        br.flags = flags + _monotone_violations(probes, increasing)
        return br
    while hi - lo > tol and len(probes) < max_probes:
        mid = 0.5 * (lo + hi)
        s = evaluate(mid)
        if s < 0:
            lo = mid
        elif s > 0:
            hi = mid
        else:
            flags.append(f"probe at {mid:.6g} straddles c* at {max_replicas} replicas; bracket left wide")
            break
    br.lo, br.hi = lo, hi
    br.ci_separated = True
    br.flags = flags + _monotone_violations(probes, increasing)
    return br


def find_alpha_c(model: CrossingModel, n: int = 16, c_star: float = 0.5, tol: float = 0.25,
                 replicas: int = 250, max_replicas: int = 1000, seed: int = 0,
                 lo: float | None = None, hi: float | None = None, workers: int = 1) -> ThresholdBracket:
    """Bracket the alpha (or bond probability) at which crossing ``[0, n]^d`` has probability ``c_star``."""
    if model.kind == "bernoulli":
        lo = 0.05 if lo is None else lo
        hi = 0.6 if hi is None else hi
    else:
        lo = 1.0 if lo is None else lo
        hi = 30.0 if hi is None else hi
    return bisect_threshold(model, n, lo, hi, c_star, tol, replicas, max_replicas, seed,
                            "alpha", workers=workers)


def alpha_from_bond(p: float) -> float:
    """Alpha at which an m = 2 soup in d = 3 opens each edge with probability p."""
    return -math.log1p(-p) / EDGE_MASS_M2


def bond_from_alpha(alpha: float) -> float:
    return -math.expm1(-alpha * EDGE_MASS_M2)


def kappa_c_curve(alphas: Sequence[float], m: int = 2, n: int = 16, tol: float = 0.02,
                  c_star: float = 0.5, replicas: int = 250, max_replicas: int = 1000, seed: int = 0,
                  kappa_hi: float = 1.0, workers: int = 1) -> list[ThresholdBracket]:
    """Bracket ``kappa_c(alpha)`` for each alpha: the kappa where crossing drops to ``c_star``.

    When the crossing probability at ``kappa = 0`` is already CI-below
    ``c_star`` the bracket is ``[0, tol]`` and the value is reported as zero.
    """
    out = []
    for a in alphas:
        model = CrossingModel("bulk", m=m, alpha=float(a))
        p0 = Probe(0.0, _probe(model, 0.0, n, seed, 0, replicas, "kappa", workers), replicas)
        if p0.side(c_star) < 0:
            out.append(ThresholdBracket(0.0, tol, c_star, n, "kappa_c collapses to zero", "kappa",
                                        [p0], ["reported as zero"], True, seed, model.describe()))
            continue
        br = bisect_threshold(model, n, 0.0, kappa_hi, c_star, tol, replicas, max_replicas, seed,
                              "kappa", floor=0.0, workers=workers)
        out.append(br)
    return out


# ---------------------------------------------------------------------------
# finite-cluster tails

@dataclass
class TailFit:
    radii: list
    log_p: list
    counts: list
    trials: list
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")
    slope_early: float = float("nan")
    slope_late: float = float("nan")
    flags: list = field(default_factory=list)
    epsilon_tail: float = 0.0

    @property
    def conclusive(self) -> bool:
        return not any(f.startswith("inconclusive") for f in self.flags)

    @property
    def flattening(self) -> bool:
        return abs(self.slope_late) < abs(self.slope_early)

    def to_dict(self) -> dict:
        return asdict(self)


def _ols(x, y) -> tuple[float, float, float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    (b, a), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a + b * x)
    ss = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss if ss > 0 else float("nan")
    return float(b), float(a), float(r2)


def fit_tail(radii, counts, trials, min_success: int = 10, min_radii: int = 5,
             epsilon_tail: float = 0.0) -> TailFit:
    """OLS of ``log(count/trials)`` against the radius, on radii with enough successes."""
    radii = [int(r) for r in radii]
    counts = [int(c) for c in counts]
    trials = [int(t) for t in trials]
    with np.errstate(divide="ignore"):
        logp = [float(np.log(c / t)) if c > 0 else float("-inf") for c, t in zip(counts, trials)]
    fit = TailFit(radii, logp, counts, trials, epsilon_tail=epsilon_tail)
    if not any(counts):
        fit.flags.append("inconclusive: all counts are zero")
        return fit
    ok = [i for i, c in enumerate(counts) if c >= min_success]
    if len(ok) < len(radii):
        fit.flags.append(f"{len(radii) - len(ok)} radii below {min_success} successes dropped")
    if len(ok) < max(2, min_radii):
        fit.flags.append(f"inconclusive: {len(ok)} usable radii, need {min_radii}")
        if len(ok) < 2:
            return fit
    x = [radii[i] for i in ok]
    y = [logp[i] for i in ok]
    fit.slope, fit.intercept, fit.r2 = _ols(x, y)
    h = len(x) // 2
    if h >= 2 and len(x) - h >= 2:
        fit.slope_early = _ols(x[:h + 1], y[:h + 1])[0]
        fit.slope_late = _ols(x[h:], y[h:])[0]
    return fit


def _cluster_boxes(f: cl.ClusterForest) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-site bounding box of its cluster and the cluster's censoring flag."""
    w = f.window
    pts = w.sites()
    n = w.n_sites
    lo = np.full((n, w.d), np.iinfo(np.int64).max)
    hi = np.full((n, w.d), np.iinfo(np.int64).min)
    np.minimum.at(lo, f.labels, pts)
    np.maximum.at(hi, f.labels, pts)
    touch = np.zeros(n, dtype=bool)
    np.logical_or.at(touch, f.labels, w.on_boundary(pts))
    return lo[f.labels], hi[f.labels], touch[f.labels]


def site_radii(f: cl.ClusterForest, sites: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sup-radius of each site's cluster seen from that site, and its censoring flag."""
    lo, hi, touch = _cluster_boxes(f)
    pts = f.window.point(sites)
    r = np.maximum(pts - lo[sites], hi[sites] - pts).max(axis=1)
    return r, touch[sites]


def _tail_replica(mode: str, alpha: float, kappa: float, L: int, R: int, inner: int,
                  radii: tuple, seed: int, replica: int) -> tuple[np.ndarray, int, float]:
    d = 3
    box = Window.around(R, d)
    if mode == "finite":
        W = box.with_margin(L // 2)
        s = sample_truncated(W, IntensityFunction(alpha, kappa, L), alpha, seed, replica)
    else:
        amb = Window.around(R + L // 2, d, boundary_mode=OPEN_TAIL)
        s = sample_window(amb, Box.at_origin(R, d), alpha, kappa, L, seed, replica)
    f = cl.build_clusters(cl.open_edges(s, window=box))
    sites = box.index(Window.around(inner, d).sites())
    r, censored = site_radii(f, sites)
    if mode == "finite":
        hits = [int(((r >= n) & ~censored).sum()) for n in radii]
    else:
        hits = [int((r >= n).sum()) for n in radii]
    return np.array(hits), sites.size, s.tail_mass_epsilon


def tail_fit(alpha: float, kappa: float = 0.0, L: int = 2, radii: Sequence[int] = (4, 6, 8, 10, 12),
             replicas: int = 100, seed: int = 0, window_radius: int | None = None,
             mode: str = "finite", min_success: int = 10, workers: int = 1) -> TailFit:
    """Spatially averaged tail of cluster radii with a log-linear fit.

    ``mode="finite"``: ``P[C(x) finite and reaching dB(x, n)]`` for the length-L
    truncated soup; clusters touching the window boundary are censored and never
    count.  ``mode="arm"``: ``P[x <-> dB(x, n)]`` for the window-sampler soup
    with lengths up to L (the subcritical contrast).  Sites are averaged over an
    inner box keeping ``B(x, max radius)`` inside the window.
    """
    radii = tuple(int(n) for n in radii)
    if mode not in ("finite", "arm"):
        raise ValueError("mode must be 'finite' or 'arm'")
    R = window_radius if window_radius is not None else 2 * max(radii) + 2
    inner = R - max(radii) - (1 if mode == "finite" else 0)
    if inner < 0:
        raise cl.MarginError("window radius too small for the largest radius")
    if alpha == 0:
        return fit_tail(radii, [0] * len(radii), [1] * len(radii))
    out = run_replicas(_tail_replica, [(mode, alpha, kappa, L, R, inner, radii, seed, r)
                                       for r in range(replicas)], workers)
    counts = np.sum([h for h, _, _ in out], axis=0)
    trials = sum(t for _, t, _ in out)
    eps = max(e for _, _, e in out) if mode == "arm" else 0.0
    return fit_tail(radii, counts, [trials] * len(radii), min_success, epsilon_tail=eps)


# ---------------------------------------------------------------------------
# truncation convergence

@dataclass
class ConvergenceRow:
    L: int
    theta: float
    diff: float
    diff_stderr: float


@dataclass
class ConvergenceTable:
    n: int
    K_max: int
    rows: list
    replicas: int
    monotone_per_replica: bool
    seed: int

    def diff_at(self, L: int) -> ConvergenceRow:
        return next(r for r in self.rows if r.L == L)


def _arm_by_cutoff(alpha, kappa, n, K_max, Ls, seed, replica) -> np.ndarray:
    d = 3
    W = Window.around(n + K_max // 2, d)
    s = sample_truncated(W, IntensityFunction(alpha, kappa, K_max), alpha, seed, replica)
    sites = W.sites()
    origin = W.index(np.zeros((1, d), np.int64))
    far = np.flatnonzero(np.abs(sites).max(axis=1) >= n)
    # a loop of length k joins at "time" k: the arm appears at the smallest cutoff that allows it
    t = cl.connection_time(s, W, origin, far, loop_times=s.lengths.astype(float))
    return np.array([t <= L for L in Ls])


def theta_L_convergence(alpha: float, kappa: float = 0.0, n: int = 8, Ls: Sequence[int] = (2, 4, 8),
                        K_max: int = 16, replicas: int = 1000, seed: int = 0,
                        workers: int = 1) -> ConvergenceTable:
    """``theta_n`` of ``split_by_length(soup, L)`` for each L against the full length-K_max soup.

    Per replica the arm indicator is non-decreasing in L, so each difference
    ``theta^(K_max) - theta^(L)`` is non-negative and non-increasing in L.
    """
    Ls = sorted(set(int(L) for L in Ls) | {K_max})
    if any(L % 2 or L < 2 for L in Ls) or max(Ls) > K_max:
        raise ValueError("cutoffs must be even, >= 2 and <= K_max")
    arms = np.array(run_replicas(_arm_by_cutoff, [(alpha, kappa, n, K_max, Ls, seed, r)
                                                  for r in range(replicas)], workers))
    full = arms[:, -1]
    diffs = full[:, None].astype(int) - arms.astype(int)
    monotone = bool((diffs >= 0).all() and (np.diff(diffs, axis=1) <= 0).all())
    rows = [ConvergenceRow(L, float(arms[:, i].mean()), float(diffs[:, i].mean()),
                           float(diffs[:, i].std(ddof=1) / math.sqrt(replicas)))
            for i, L in enumerate(Ls)]
    return ConvergenceTable(n, K_max, rows, replicas, monotone, seed)


# ---------------------------------------------------------------------------
# cluster sizes and big-box connections

def _origin_cluster(alpha, kappa, L, R, seed, replica) -> tuple[int, bool]:
    d = 3
    box = Window.around(R, d)
    s = sample_truncated(box.with_margin(L // 2), IntensityFunction(alpha, kappa, L), alpha, seed, replica)
    ext = cl.finite_cluster_extent(cl.build_clusters(cl.open_edges(s, window=box)))
    return ext.size, ext.touches_window_boundary


@dataclass(frozen=True)
class ClusterSizeEstimate:
    estimate: Estimate | None
    censored: int
    replicas: int


def mean_finite_cluster(alpha: float, kappa: float = 0.0, L: int = 2, window_radius: int = 10,
                        replicas: int = 1000, seed: int = 0, workers: int = 1) -> ClusterSizeEstimate:
    """Mean size of the origin's cluster over replicas where it does not touch the window boundary."""
    out = run_replicas(_origin_cluster, [(alpha, kappa, L, window_radius, seed, r)
                                         for r in range(replicas)], workers)
    sizes = np.array([s for s, c in out if not c])
    censored = sum(1 for _, c in out if c)
    est = Estimate.from_samples(sizes, seed) if sizes.size >= 2 else None
    return ClusterSizeEstimate(est, censored, replicas)


def _box_connect(alpha, kappa, L0, n, R, seed, replica) -> bool:
    d = 3
    box = Window.around(R, d)
    s = sample_truncated(box.with_margin(L0 // 2), IntensityFunction(alpha, kappa, L0), alpha, seed, replica)
    f = cl.build_clusters(cl.open_edges(s, window=box))
    inner = box.index(Window.around(n, d).sites())
    shell = box.boundary_indices()
    return bool(np.intersect1d(f.labels[inner], f.labels[shell]).size)


@dataclass
class BigBoxResult:
    n: list
    estimates: list
    slope: float
    flags: list


def big_box_connect(alpha: float, L0: int = 2, ns: Sequence[int] = (1, 2, 3), replicas: int = 500,
                    seed: int = 0, kappa: float = 0.0, window_factor: int = 3,
                    workers: int = 1) -> BigBoxResult:
    """``P[B(n) <-> boundary of B(window_factor * n)]`` (proxy for connection to infinity)."""
    ests, flags = [], []
    for n in ns:
        R = max(window_factor * n, n + 1)
        hits = run_replicas(_box_connect, [(alpha, kappa, L0, n, R, seed, r) for r in range(replicas)], workers)
        e = Estimate.from_samples(hits, seed)
        if e.value == 1.0:
            flags.append(f"saturated at n={n}")
        ests.append(e)
    x = np.asarray(ns, float) ** (3 - 2)
    y = [math.log(1 - e.value) if e.value < 1 else float("nan") for e in ests]
    good = [i for i, v in enumerate(y) if np.isfinite(v)]
    slope = _ols(x[good], np.asarray(y)[good])[0] if len(good) >= 2 else float("nan")
    return BigBoxResult(list(ns), ests, slope, flags)


# ---------------------------------------------------------------------------
# one-loop connection scaling

def annulus_mass_ratio(N: int = 4, d: int = 3, kappa: float = 0.0) -> tuple[float, float, float]:
    """``mu(l meets B(N) and dB(2N))``, the same for ``dB(4N)``, and their ratio."""
    A = Box.at_origin(N, d).sites()
    m2 = one_loop_connection_mass(A, Box.at_origin(2 * N, d).boundary_sites(), kappa=kappa).value
    m4 = one_loop_connection_mass(A, Box.at_origin(4 * N, d).boundary_sites(), kappa=kappa).value
    return m2, m4, m4 / m2
