"""Multiscale renormalization on soup realizations, and regular-ball checks.

Scales follow ``l_n = l0 4^n``, ``r_n = r0 2^n`` and ``L_{n+1} = l_n L_n``.
Vertices of ``G_n = L_n Z^d`` are classified good or bad from the length-L
truncated soup: level 0 directly, level n+1 from the n-bad vertices inside
each ``L_{n+1}``-cell.  The theta inputs are estimates supplied by the
caller and are echoed in every report.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from . import clusters as cl
from .lattice import Box, Window, as_points
from .sampler import SoupRealization

INFINITY_PROXY = "connected to the window boundary"
EXACT_CAP = 20


# ---------------------------------------------------------------------------
# scales

@dataclass(frozen=True)
class ScaleSequence:
    l0: int
    r0: int
    L0: int
    levels: int = 2

    def __post_init__(self):
        if min(self.l0, self.r0, self.L0) < 1:
            raise ValueError("l0, r0 and L0 must be positive")
        if self.l0 % self.r0:
            raise ValueError("l0 must be divisible by r0")
        if self.levels < 0:
            raise ValueError("levels must be non-negative")
        for n in range(self.levels + 1):
            if self.L(n) >= 2 ** 62:
                raise OverflowError(f"L_{n} overflows 64-bit coordinates")

    def l(self, n: int) -> int:
        return self.l0 * 4 ** n

    def r(self, n: int) -> int:
        return self.r0 * 2 ** n

    def L(self, n: int) -> int:
        L = self.L0
        for k in range(n):
            L *= self.l(k)
        return L

    def constraints(self, theta: float, d: int) -> dict:
        """Desk-scale status of the scale conditions (never enforced, always reported)."""
        need = 1e-13 * min(theta, 2.0 ** (2 - d))
        prod = math.prod(1 - (4 * self.r(i) / self.l(i)) ** d for i in range(60))
        return {
            "r0_over_l0": self.r0 / self.l0,
            "r0_over_l0_required_max": need,
            "ratio_satisfied": self.r0 / self.l0 <= need,
            "product_bound": prod,
            "product_required_min": 1 - 1e-12 * theta,
            "product_satisfied": prod > 1 - 1e-12 * theta,
            "theta_L0d": theta * self.L0 ** d,
            "theta_L0d_satisfied": theta * self.L0 ** d >= 100,
        }

    def to_dict(self) -> dict:
        return {"l0": self.l0, "r0": self.r0, "L0": self.L0, "levels": self.levels,
                "L": [self.L(n) for n in range(self.levels + 1)],
                "l": [self.l(n) for n in range(self.levels + 1)],
                "r": [self.r(n) for n in range(self.levels + 1)]}


# ---------------------------------------------------------------------------
# seeds

def is_seed(box: Box | Window, s: SoupRealization, alpha: float) -> bool:
    """Every edge of the box is traversed by a loop (arrival <= alpha) lying inside the box."""
    w = box if isinstance(box, Window) else Window.from_box(box)
    need = w.edge_slots()
    if need.size == 0:
        return True
    sub = s.restrict(alpha)
    sub = sub.select(sub.contained_in(w))
    slots, _ = cl.edge_times(sub, w)
    return bool(np.isin(need, slots).all())


# ---------------------------------------------------------------------------
# goodness

@dataclass
class GoodnessField:
    """Good/bad flags per level: ``good[n]`` over ``G_n`` vertices ``origin[n] + L_n * index``."""

    scales: ScaleSequence
    theta_L: float
    origin: list
    good: list

    @property
    def d(self) -> int:
        return len(self.origin[0])

    def vertices(self, n: int) -> np.ndarray:
        shape = self.good[n].shape
        idx = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1).reshape(-1, len(shape))
        return np.asarray(self.origin[n]) + self.scales.L(n) * idx

    def is_good(self, n: int, z) -> bool:
        idx = (np.asarray(z) - np.asarray(self.origin[n])) // self.scales.L(n)
        if (idx < 0).any() or (idx >= self.good[n].shape).any():
            raise KeyError(f"{tuple(z)} not classified at level {n}")
        return bool(self.good[n][tuple(idx)])

    def bad_vertices(self, n: int) -> np.ndarray:
        return self.vertices(n)[~self.good[n].ravel()]

    def leq(self, other: "GoodnessField") -> bool:
        """Pointwise good(self) <= good(other) on every level."""
        return all(np.array_equal(a.shape, b.shape) and bool((a <= b).all())
                   for a, b in zip(self.good, other.good))

    def with_level0(self, good0: np.ndarray, levels: int | None = None) -> "GoodnessField":
        return recurse_goodness(good0, self.scales, self.origin[0], self.theta_L,
                                self.scales.levels if levels is None else levels)


def recurse_goodness(good0: np.ndarray, scales: ScaleSequence, origin0, theta_L: float,
                     levels: int | None = None) -> GoodnessField:
    """Build levels ``1..levels`` from a level-0 grid.

    ``x`` in ``G_{n+1}`` is good iff the n-bad vertices of ``G_n`` inside
    ``x + [0, L_{n+1})^d`` have sup-distance diameter below ``r_n L_n``; only
    cells whose whole level-n content is classified are kept.
    """
    levels = scales.levels if levels is None else levels
    good = [np.asarray(good0, dtype=bool)]
    origin = [tuple(int(c) for c in origin0)]
    d = good[0].ndim
    for n in range(levels):
        ln = scales.l(n)
        prev = good[n]
        shape = tuple(s // ln for s in prev.shape)
        nxt = np.ones(shape, dtype=bool)
        sep = scales.r(n)  # in units of L_n
        for idx in itertools.product(*[range(s) for s in shape]):
            block = prev[tuple(slice(i * ln, (i + 1) * ln) for i in idx)]
            bad = np.argwhere(~block)
            if len(bad) >= 2:
                span = (bad.max(axis=0) - bad.min(axis=0)).max()
                nxt[idx] = span < sep
        good.append(nxt)
        origin.append(origin[n])
    return GoodnessField(scales, theta_L, origin, good)


def _cell_labels(w: Window, e: cl.OpenEdgeSet, cell: int, origin, axis: int | None = None,
                 phase: int = 0) -> np.ndarray:
    """Union-find labels using only edges inside one block (cells, or pairs of cells along ``axis``)."""
    pts = w.sites()
    rel = pts - np.asarray(origin)
    key = rel // cell
    if axis is not None:
        key = key.copy()
        key[:, axis] = (key[:, axis] - phase) // 2
    u, v = e.endpoints()
    same = (key[u] == key[v]).all(axis=1)
    return _kernels.union_find_labels(w.n_sites, u[same], v[same])


def classify_good(s: SoupRealization, scales: ScaleSequence, theta_L: float, region_lo, region_hi,
                  window: Window | None = None, alpha: float | None = None,
                  levels: int | None = None) -> GoodnessField:
    """Level-0 goodness on ``G_0`` cells inside ``[region_lo, region_hi)`` and its recursion.

    ``s`` should hold the length-L truncated soup.  Cluster sets are computed
    on ``window`` (default the soup's window), which must contain the region
    plus a margin of ``L0`` on each side for the neighbour conditions.
    """
    if theta_L <= 0:
        raise ValueError("theta_L must be positive")
    w = s.window if window is None else window
    L0 = scales.L0
    lo = np.asarray(region_lo, dtype=np.int64)
    hi = np.asarray(region_hi, dtype=np.int64)
    d = lo.size
    if ((hi - lo) % L0).any() or (hi <= lo).any():
        raise ValueError("region sides must be positive multiples of L0")
    if not (w.contains(lo - L0)[0] and w.contains(hi - 1 + L0)[0]):
        raise cl.MarginError("window must contain the region with an L0 margin")
    e = cl.open_edges(s, alpha, window=w)
    f = cl.build_clusters(e)
    pts = w.sites()
    # S_{L0}: clusters of sup-diameter >= L0
    span = np.zeros(w.n_sites, dtype=np.int64)
    cmin = np.full((w.n_sites, d), np.iinfo(np.int64).max)
    cmax = np.full((w.n_sites, d), np.iinfo(np.int64).min)
    np.minimum.at(cmin, f.labels, pts)
    np.maximum.at(cmax, f.labels, pts)
    span = (cmax - cmin).max(axis=1)[f.labels]
    inS = span >= L0
    target = theta_L * L0 ** d
    # components of S_{L0} inside each cell and the largest one per cell
    cell_lab = _cell_labels(w, e, L0, lo)
    cell_key = (pts - lo) // L0
    ncell = (hi - lo) // L0 + 2  # cells from -1 to ncell-2 in index units
    flat = np.ravel_multi_index(tuple((cell_key + 1).T), tuple(ncell + 0), mode="clip")
    inside = ((cell_key >= -1) & (cell_key < ncell - 1)).all(axis=1)
    comp_size = np.bincount(cell_lab[inS & inside], minlength=w.n_sites)
    count_S = np.bincount(flat[inS & inside], minlength=int(np.prod(ncell)))
    best_comp = np.full(int(np.prod(ncell)), -1, dtype=np.int64)
    best_size = np.zeros(int(np.prod(ncell)), dtype=np.int64)
    roots = np.flatnonzero(comp_size)
    order = np.lexsort((roots, -comp_size[roots]))
    for rt in roots[order]:
        c = flat[rt]
        if best_comp[c] < 0:
            best_comp[c] = rt
            best_size[c] = comp_size[rt]
    has_big = best_size >= 0.9 * target
    # pair connectivity: blocks of two cells along each axis, both phases
    pair_lab = {(a, ph): _cell_labels(w, e, L0, lo, a, ph) for a in range(d) for ph in (0, 1)}
    shape0 = tuple(int(x) for x in (hi - lo) // L0)
    good0 = np.zeros(shape0, dtype=bool)
    for idx in itertools.product(*[range(sz) for sz in shape0]):
        k = np.asarray(idx) + 1
        c = np.ravel_multi_index(tuple(k), tuple(ncell))
        ok = count_S[c] < 1.1 * target and has_big[c]
        for a in range(d):
            if not ok:
                break
            for step in (-1, 1):
                k2 = k.copy()
                k2[a] += step
                c2 = np.ravel_multi_index(tuple(k2), tuple(ncell))
                if not has_big[c2]:
                    ok = False
                    break
                first = min(k[a], k2[a]) - 1  # cell index of the lower cell of the pair
                lab = pair_lab[(a, first % 2)]
                if lab[best_comp[c]] != lab[best_comp[c2]]:
                    ok = False
                    break
        good0[idx] = ok
    return recurse_goodness(good0, scales, tuple(int(x) for x in lo), theta_L, levels)


# ---------------------------------------------------------------------------
# frames

def build_frame(g: GoodnessField, K: int, s: int, x_s=None) -> np.ndarray:
    """G_0 vertices of ``x_s + [-2L_s, (K+2)L_s)^d`` minus the bad regions of levels below s.

    An n-bad ``z`` removes ``(z + [0, 2 r_n L_n)^d) & (floor(z / L_{n+1}) L_{n+1} + [0, L_{n+1})^d)``.
    """
    sc = g.scales
    d = g.d
    x_s = np.zeros(d, np.int64) if x_s is None else np.asarray(x_s, np.int64)
    Ls = sc.L(s)
    lo, hi = x_s - 2 * Ls, x_s + (K + 2) * Ls
    verts = g.vertices(0)
    keep = ((verts >= lo) & (verts < hi)).all(axis=1)
    for n in range(s):
        Ln, Ln1 = sc.L(n), sc.L(n + 1)
        for z in g.bad_vertices(n):
            a_lo = np.maximum(z, (z // Ln1) * Ln1)
            a_hi = np.minimum(z + 2 * sc.r(n) * Ln, (z // Ln1) * Ln1 + Ln1)
            keep &= ~((verts >= a_lo) & (verts < a_hi)).all(axis=1)
    return verts[keep]


# ---------------------------------------------------------------------------
# H event

@dataclass
class HEventReport:
    a: bool
    b: bool
    c: bool
    cell_counts: dict
    c_limit: float
    proxy: dict
    scales: dict
    constraints: dict
    theta_L: float
    theta: float
    K: int
    s: int
    L: int
    b_failures: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)


def check_H_event(s_full: SoupRealization, L: int, scales: ScaleSequence, K: int, s_level: int,
                  theta_L: float, theta: float, x_s=None, alpha: float | None = None) -> HEventReport:
    """Evaluate parts a), b) and c) of the H event around ``x_s``.

    The window of ``s_full`` must contain ``x_s + [-2L_s, (K+2)L_s)^d`` with an
    ``L0`` margin.  Connection to infinity is proxied by connection to the
    window boundary.
    """
    w = s_full.window
    d = w.d
    x_s = np.zeros(d, np.int64) if x_s is None else np.asarray(x_s, np.int64)
    Ls = scales.L(s_level)
    lo, hi = x_s - 2 * Ls, x_s + (K + 2) * Ls
    if not (w.contains(lo - scales.L0)[0] and w.contains(hi - 1 + scales.L0)[0]):
        raise cl.MarginError("window must contain the (K+4) L_s box with an L0 margin")
    alpha = s_full.alpha_max if alpha is None else alpha
    full = s_full.restrict(alpha)
    short, long_ = full.split_by_length(L) if L >= 2 else (full.select(np.zeros(len(full), bool)), full)
    # a)
    g = classify_good(short, scales, theta_L, lo, hi, window=w, levels=s_level)
    a = bool(g.good[s_level].all()) if g.good[s_level].size else False
    # b) clusters of the full soup with diameter >= L_s inside x_s + [0, K L_s)^d
    e_full = cl.open_edges(full, window=w)
    f_full = cl.build_clusters(e_full)
    pts = w.sites()
    cmin = np.full((w.n_sites, d), np.iinfo(np.int64).max)
    cmax = np.full((w.n_sites, d), np.iinfo(np.int64).min)
    np.minimum.at(cmin, f_full.labels, pts)
    np.maximum.at(cmax, f_full.labels, pts)
    big = (cmax - cmin).max(axis=1)[f_full.labels] >= Ls
    core = ((pts >= x_s) & (pts < x_s + K * Ls)).all(axis=1)
    cand = np.flatnonzero(big & core)
    A = cl.adjacency(e_full)
    indptr, indices = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    failures = 0
    for x in cand:
        p = pts[x]
        allowed = (np.abs(pts - p).max(axis=1) <= 2 * Ls)
        reached = np.zeros(w.n_sites, dtype=bool)
        reached[_kernels.bfs_component(indptr, indices, x, allowed)] = True
        near = cand[np.abs(pts[cand] - p).max(axis=1) <= Ls]
        failures += int((~reached[near]).sum())
    b = failures == 0
    # c) sites off the infinite-cluster proxy but attached to a long loop
    f_short = cl.build_clusters(cl.open_edges(short, window=w))
    boundary_labels = np.unique(f_short.labels[w.boundary_indices()])
    to_inf = np.isin(f_short.labels, boundary_labels)
    lp = long_.points[w.contains(long_.points)] if len(long_) else np.zeros((0, d), np.int64)
    touched = np.zeros(w.n_sites, dtype=bool)
    touched[np.unique(f_short.labels[w.index(lp)])] = True
    attached = touched[f_short.labels] & ~to_inf
    counts = {}
    limit = theta / 100 * Ls ** d
    c = True
    for k in itertools.product(range(-2, K + 2), repeat=d):
        clo = x_s + np.asarray(k) * Ls
        inside = ((pts >= clo) & (pts < clo + Ls)).all(axis=1)
        cnt = int((attached & inside).sum())
        counts[",".join(map(str, k))] = cnt
        c &= cnt <= limit
    proxy = {"infinity_proxy": INFINITY_PROXY, "window_lo": w.lo.tolist(), "window_hi": w.hi.tolist(),
             "margin": int(min((lo - w.lo).min(), (w.hi - (hi - 1)).min()))}
    return HEventReport(a, b, bool(c), counts, limit, proxy, scales.to_dict(),
                        scales.constraints(theta, d), theta_L, theta, K, s_level, L, failures)


# ---------------------------------------------------------------------------
# regular balls

@dataclass(frozen=True)
class ClusterGraph:
    """A small graph: vertex coordinates and undirected edges ``(i, j)``."""

    sites: np.ndarray
    edges: np.ndarray

    @classmethod
    def from_forest(cls, f: cl.ClusterForest, p) -> "ClusterGraph":
        comp = f.component(p)
        pos = -np.ones(f.window.n_sites, dtype=np.int64)
        pos[comp] = np.arange(comp.size)
        u, v = f.edges.endpoints()
        keep = (pos[u] >= 0) & (pos[v] >= 0)
        return cls(f.window.point(comp), np.stack([pos[u[keep]], pos[v[keep]]], axis=1))

    @classmethod
    def from_sites(cls, sites, edges=None) -> "ClusterGraph":
        """All lattice edges among ``sites`` unless ``edges`` is given."""
        from .lattice import lattice_edges
        pts = as_points(sites)
        e = lattice_edges(pts) if edges is None else edges
        return cls(pts, np.asarray(e, dtype=np.int64).reshape(-1, 2))

    @property
    def n(self) -> int:
        return len(self.sites)

    def neighbours(self) -> list[list[int]]:
        nb = [[] for _ in range(self.n)]
        for i, j in self.edges.tolist():
            nb[i].append(j)
            nb[j].append(i)
        return nb

    def distances(self, src: int) -> np.ndarray:
        nb = self.neighbours()
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[src] = 0
        queue = [src]
        for x in queue:
            for y in nb[x]:
                if dist[y] < 0:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        return dist

    def induced(self, keep: np.ndarray) -> "ClusterGraph":
        keep = np.asarray(keep, dtype=bool)
        pos = -np.ones(self.n, dtype=np.int64)
        pos[keep] = np.arange(keep.sum())
        e = self.edges
        ok = keep[e[:, 0]] & keep[e[:, 1]] if len(e) else np.zeros(0, bool)
        return ClusterGraph(self.sites[keep], pos[e[ok]].reshape(-1, 2))


@dataclass
class RegularBallReport:
    center: tuple
    r: int
    volume: int
    volume_required: float
    candidate_size: int
    expansion: float
    expansion_required: float
    expansion_exact: bool
    C_V: float
    C_P: float
    C_W: float
    mode: str
    verdict: str
    witness: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _edge_boundary(g: ClusterGraph, inA: np.ndarray) -> int:
    e = g.edges
    return int((inA[e[:, 0]] != inA[e[:, 1]]).sum()) if len(e) else 0


def exact_min_expansion(g: ClusterGraph, cap: int = EXACT_CAP) -> tuple[float, np.ndarray]:
    """Exact ``min #dA / #A`` over ``0 < #A <= n/2`` by subset enumeration."""
    if g.n > cap:
        raise ValueError(f"exact enumeration is capped at {cap} vertices")
    if g.n > 62:
        raise ValueError("exact enumeration needs at most 62 vertices")
    if g.n < 2:
        return float("inf"), np.zeros(g.n, bool)
    nbr = np.zeros(g.n, dtype=np.int64)
    for i, j in g.edges.tolist():
        nbr[i] |= 1 << j
        nbr[j] |= 1 << i
    b, s, m = _kernels.min_edge_expansion(nbr, g.n // 2)
    inA = np.array([(m >> v) & 1 for v in range(g.n)], dtype=bool)
    return b / s, inA


def _orderings(g: ClusterGraph, center: int) -> list[np.ndarray]:
    out = [np.argsort(g.distances(center), kind="stable")]
    far = int(np.argmax(g.distances(center)))
    out.append(np.argsort(g.distances(far), kind="stable"))
    if g.n >= 3 and len(g.edges):
        Lap = np.zeros((g.n, g.n))
        for i, j in g.edges.tolist():
            Lap[i, j] -= 1
            Lap[j, i] -= 1
            Lap[i, i] += 1
            Lap[j, j] += 1
        vals, vecs = np.linalg.eigh(Lap)
        fied = vecs[:, 1]
        out += [np.argsort(fied, kind="stable"), np.argsort(-fied, kind="stable")]
    return out


def sweep_min_expansion(g: ClusterGraph, center: int = 0) -> tuple[float, np.ndarray]:
    """Upper bound on the minimum expansion from prefix cuts of BFS and Fiedler orderings."""
    best, arg = float("inf"), np.zeros(g.n, bool)
    for order in _orderings(g, center):
        inA = np.zeros(g.n, dtype=bool)
        for k, v in enumerate(order[: g.n // 2], start=1):
            inA[v] = True
            ratio = _edge_boundary(g, inA) / k
            if ratio < best:
                best, arg = ratio, inA.copy()
    return best, arg


def check_regular_ball(g: ClusterGraph, center, r: int, C_V: float = 1.0, C_P: float = 1.0,
                       C_W: float = 1.0, mode: str = "exact", d: int | None = None,
                       cap: int = EXACT_CAP) -> RegularBallReport:
    """Volume and isoperimetric test of the graph ball ``B_G(center, r)``.

    The candidate set is the graph ball of radius ``floor(C_W r)`` (it contains
    the ball and sits in ``B_G(center, C_W r)``).  Edge boundaries are taken
    inside the candidate set.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if mode not in ("exact", "bound"):
        raise ValueError("mode must be 'exact' or 'bound'")
    c = center if np.ndim(center) == 0 else int(np.flatnonzero((g.sites == np.asarray(center)).all(axis=1))[0])
    d = g.sites.shape[1] if d is None else d
    dist = g.distances(c)
    ecc = int(dist.max())
    if r > max(1, ecc):
        raise ValueError(f"r={r} exceeds the subgraph extent (eccentricity {ecc})")
    vol = int(((dist >= 0) & (dist <= r)).sum())
    cand_mask = (dist >= 0) & (dist <= math.floor(C_W * r))
    C = g.induced(cand_mask)
    center_in_C = int(np.cumsum(cand_mask)[c] - 1)
    need_v = C_V * r ** d
    need_e = 1.0 / (r * math.sqrt(C_P))
    if mode == "exact":
        h, arg = exact_min_expansion(C, cap)
    else:
        h, arg = sweep_min_expansion(C, center_in_C)
    vol_ok = vol >= need_v
    if not vol_ok or h < need_e:
        verdict = "not regular"
    elif mode == "exact":
        verdict = "regular"
    else:
        verdict = "consistent-with-regular"
    wit = C.sites[arg].tolist() if np.isfinite(h) else []
    return RegularBallReport(tuple(int(x) for x in g.sites[c]), r, vol, need_v, C.n, h, need_e,
                             mode == "exact", C_V, C_P, C_W, mode, verdict, wit)
