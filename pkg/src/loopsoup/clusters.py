"""Open-edge graphs of loop soups and the connectivity queries built on them."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from . import _kernels
from .lattice import Box, Slab, Window, as_points
from .sampler import SoupRealization

CLUSTER_CSV_COLUMNS = ("replica", "alpha", "n", "one_arm", "c0_size", "c0_radius", "censored",
                       "largest", "second_largest")


class MarginError(ValueError):
    """A query needs more room around it than the window provides."""


def loop_edges(s: SoupRealization) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Every traversed step as ``(lower endpoint, axis, loop id)`` (wrap step included)."""
    P = len(s.points)
    if P == 0:
        return np.zeros((0, s.d), np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    nxt = np.arange(1, P + 1)
    nxt[s.offsets[1:] - 1] = s.offsets[:-1]
    diff = s.points[nxt] - s.points
    axis = np.abs(diff).argmax(axis=1)
    up = diff[np.arange(P), axis] > 0
    lower = np.where(up[:, None], s.points, s.points[nxt])
    return lower, axis, s.loop_index()


def edge_times(s: SoupRealization, w: Window,
               loop_times: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Window edge slots traversed by the soup and the earliest time each opens.

    ``loop_times`` defaults to the arrivals; an edge opens at the smallest time
    of the loops traversing it.  Edges with an endpoint outside ``w`` are dropped.
    """
    times = s.arrivals if loop_times is None else np.asarray(loop_times, dtype=float)
    lower, axis, lid = loop_edges(s)
    if not len(lower):
        return np.zeros(0, np.int64), np.zeros(0)
    ok = w.contains(lower) & (lower[np.arange(len(lower)), axis] < w.hi[axis])
    slots = w.index(lower[ok]) * w.d + axis[ok]
    t = times[lid[ok]]
    order = np.lexsort((t, slots))
    slots, t = slots[order], t[order]
    first = np.ones(slots.size, dtype=bool)
    first[1:] = slots[1:] != slots[:-1]
    return slots[first], t[first]


def kappa_times(s: SoupRealization, kappa: float) -> np.ndarray:
    """Effective arrivals at killing ``kappa``: the soup at ``(alpha, kappa)`` is ``time <= alpha``."""
    if kappa < s.kappa:
        raise ValueError("cannot lower kappa below the sampled value")
    return s.arrivals * np.exp(s.lengths * (np.log1p(kappa) - np.log1p(s.kappa)))


@dataclass(frozen=True, eq=False)
class OpenEdgeSet:
    """Sorted open edge slots (``index(lower) * d + axis``) of a window."""

    window: Window
    slots: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.slots.size)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.window.n_edge_slots, dtype=bool)
        m[self.slots] = True
        return m

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        w = self.window
        low, axis = np.divmod(self.slots, w.d)
        return low, low + w.strides[axis]

    def is_open(self, x, y) -> bool:
        x, y = as_points(x, self.window.d)[0], as_points(y, self.window.d)[0]
        diff = y - x
        if np.abs(diff).sum() != 1:
            return False
        a = int(np.abs(diff).argmax())
        low = x if diff[a] > 0 else y
        i = self.window.index(low)[0]
        return bool(i >= 0 and np.isin(i * self.window.d + a, self.slots))

    def issubset(self, other: "OpenEdgeSet") -> bool:
        return self.window == other.window and bool(np.isin(self.slots, other.slots).all())

    def restrict_to(self, w: Window) -> "OpenEdgeSet":
        """The open edges with both endpoints in the sub-window ``w``."""
        if w.d != self.window.d:
            raise ValueError("dimension mismatch")
        low, axis = np.divmod(self.slots, self.window.d)
        pts = self.window.point(low)
        ok = w.contains(pts) & (pts[np.arange(len(pts)), axis] < w.hi[axis])
        slots = np.sort(w.index(pts[ok]) * w.d + axis[ok])
        return OpenEdgeSet(w, slots, dict(self.provenance))


def open_edges(s: SoupRealization, alpha: float | None = None, window: Window | None = None,
               kappa: float | None = None) -> OpenEdgeSet:
    """Edges of ``window`` traversed by a loop of the soup at ``alpha`` (and ``kappa``)."""
    w = s.window if window is None else window
    if w is None:
        raise ValueError("realization has no window; pass one")
    alpha = s.alpha_max if alpha is None else alpha
    if alpha > s.alpha_max * (1 + 1e-12) + 1e-300:
        raise ValueError("alpha above the realization's alpha_max")
    lt = None if kappa is None else kappa_times(s, kappa)
    slots, t = edge_times(s, w, lt)
    # loop reach not already absorbed by the gap between the soup window and w
    reach = s.reach
    if s.window is not None and reach:
        gap = int(min((w.lo - s.window.lo).min(), (s.window.hi - w.hi).min()))
        reach = max(0, reach - max(gap, 0))
    prov = dict(s.provenance, alpha=float(alpha), reach=int(reach))
    return OpenEdgeSet(w, slots[t <= alpha], prov)


def full_edge_set(w: Window) -> OpenEdgeSet:
    return OpenEdgeSet(w, w.edge_slots(), {"full": True})


@dataclass(frozen=True, eq=False)
class ClusterForest:
    """Component labels (smallest site index of each cluster) over a window."""

    window: Window
    labels: np.ndarray
    edges: OpenEdgeSet
    reach: int = 0

    @property
    def sizes(self) -> np.ndarray:
        """Component size indexed by label (zero for non-root indices)."""
        return np.bincount(self.labels, minlength=self.window.n_sites)

    @property
    def n_components(self) -> int:
        return int(np.count_nonzero(self.labels == np.arange(self.labels.size)))

    def label_of(self, p) -> int:
        i = self.window.index(p)[0]
        if i < 0:
            raise ValueError("point outside the window")
        return int(self.labels[i])

    def connected(self, a, b) -> bool:
        return self.label_of(a) == self.label_of(b)

    def component(self, p) -> np.ndarray:
        """Site indices of the cluster of ``p``."""
        return np.flatnonzero(self.labels == self.label_of(p))

    def largest(self, k: int = 2) -> list[int]:
        sz = np.sort(self.sizes)[::-1]
        return [int(v) for v in sz[:k]] + [0] * max(0, k - sz.size)


def build_clusters(e: OpenEdgeSet, reach: int | None = None) -> ClusterForest:
    """Union-find components; ``reach`` defaults to the margin recorded by :func:`open_edges`."""
    u, v = e.endpoints()
    labels = _kernels.union_find_labels(e.window.n_sites, u, v)
    reach = int(e.provenance.get("reach", 0)) if reach is None else reach
    return ClusterForest(e.window, labels, e, reach)


def adjacency(e: OpenEdgeSet) -> sps.csr_matrix:
    n = e.window.n_sites
    u, v = e.endpoints()
    A = sps.coo_matrix((np.ones(2 * u.size, dtype=np.int8),
                        (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
    return A.tocsr()


def bfs_clusters(e: OpenEdgeSet) -> np.ndarray:
    """Independent BFS labelling (smallest site index per component)."""
    A = adjacency(e)
    return _kernels.bfs_labels(A.indptr.astype(np.int64), A.indices.astype(np.int64))


def _check_margin(w: Window, origin, radius: int, margin: int) -> None:
    need = Box(tuple(int(c) for c in origin), radius + margin)
    if not (w.contains(need.lo)[0] and w.contains(need.hi)[0]):
        raise MarginError(f"window must contain B(origin, {radius} + {margin})")


def one_arm(f: ClusterForest, n: int, origin=None, margin: int | None = None) -> bool:
    """Whether ``origin`` (default 0) is joined to ``dB(origin, n)`` by open edges.

    The window must contain ``B(origin, n + margin)``; ``margin`` defaults to the
    forest's loop reach (m/2 for length-m truncated soups).
    """
    d = f.window.d
    origin = np.zeros(d, np.int64) if origin is None else as_points(origin, d)[0]
    _check_margin(f.window, origin, n, f.reach if margin is None else margin)
    if n <= 0:
        return True
    comp = f.window.point(f.component(origin))
    return bool(np.abs(comp - origin).max(initial=0) >= n)


@dataclass(frozen=True)
class ClusterExtent:
    size: int
    radius: int
    touches_window_boundary: bool

    def __iter__(self):
        return iter((self.size, self.radius, self.touches_window_boundary))


def finite_cluster_extent(f: ClusterForest, origin=None) -> ClusterExtent:
    """Size, sup-radius about ``origin`` and censoring flag of the origin's cluster."""
    d = f.window.d
    origin = np.zeros(d, np.int64) if origin is None else as_points(origin, d)[0]
    comp = f.window.point(f.component(origin))
    radius = int(np.abs(comp - origin).max(initial=0))
    touches = bool(f.window.on_boundary(comp).any())
    return ClusterExtent(len(comp), radius, touches)


def face_masks(w: Window, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    s = w.sites()
    return s[:, axis] == w.lo[axis], s[:, axis] == w.hi[axis]


def box_crossing(f: ClusterForest, axis: int = 0) -> bool:
    """Open path across the window between its two faces normal to ``axis``."""
    lo, hi = face_masks(f.window, axis)
    return bool(np.intersect1d(f.labels[lo], f.labels[hi]).size)


def slab_crossing(f: ClusterForest, s: Slab, extent: int) -> bool:
    """Open path inside the slab between the faces of its window along the first free axis.

    The forest must be built on ``s.window(extent)`` (edges outside are ignored).
    """
    w = s.window(extent)
    if f.window != w and not (np.array_equal(f.window.lo, w.lo) and np.array_equal(f.window.hi, w.hi)):
        raise ValueError("forest must be built on the slab window")
    return box_crossing(f, s.free_axes[0])


def connection_time(s: SoupRealization, w: Window, sources: np.ndarray, targets: np.ndarray,
                    loop_times: np.ndarray | None = None) -> float:
    """Smallest time at which some source site is joined to some target site (inf if never).

    Edges open at the earliest time among their loops; sites are window indices.
    """
    sources = np.asarray(sources, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if np.intersect1d(sources, targets).size:
        return 0.0
    slots, t = edge_times(s, w, loop_times)
    n = w.n_sites
    low, axis = np.divmod(slots, w.d)
    us = np.concatenate([np.full(sources.size, n), np.full(targets.size, n + 1), low])
    vs = np.concatenate([sources, targets, low + w.strides[axis]])
    times = np.concatenate([np.full(sources.size + targets.size, -np.inf), t])
    order = np.argsort(times, kind="stable")
    pos = _kernels.first_connection(n + 2, us, vs, order, n, n + 1)
    return float(times[order[pos]]) if pos >= 0 else float("inf")


def cluster_summary(f: ClusterForest, replica: int, alpha: float, n: int, origin=None) -> dict:
    ext = finite_cluster_extent(f, origin)
    big = f.largest(2)
    return {"replica": replica, "alpha": alpha, "n": n, "one_arm": int(ext.radius >= n),
            "c0_size": ext.size, "c0_radius": ext.radius, "censored": int(ext.touches_window_boundary),
            "largest": big[0], "second_largest": big[1]}


def write_cluster_csv(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=CLUSTER_CSV_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: r[k] for k in CLUSTER_CSV_COLUMNS})
    return path
