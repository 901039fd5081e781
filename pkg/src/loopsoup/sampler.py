"""Loop-soup realizations and the samplers that draw them.

A realization is a flat, immutable bundle of loops (points stored based at
the sampled root, wrap edge implicit) with an arrival parameter per loop.
Keeping the loops with arrival ``<= alpha`` gives the soup at intensity
``alpha``, so one draw at ``alpha_max`` serves a whole monotone sweep.
"""
from __future__ import annotations

import io
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import rng as rngmod
from .lattice import ABSORBING, Box, Window, as_points
from .loop_model import (IntensityFunction, Loop, LoopError, free_tail_bound, mass_table,
                         return_probability, transition_matrix)
from .walks import KilledBridge, uniform_closed_walks

KERNEL_SITE_LIMIT = 400


@dataclass(frozen=True, eq=False)
class SoupRealization:
    lengths: np.ndarray
    arrivals: np.ndarray
    offsets: np.ndarray
    points: np.ndarray
    d: int
    alpha_max: float
    kappa: float = 0.0
    window: Window | None = None
    box: Box | None = None
    reach: int = 0
    tail_mass_epsilon: float = 0.0
    provenance: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    # -- construction -----------------------------------------------------
    @classmethod
    def empty(cls, d: int, alpha_max: float = 0.0, **kw) -> "SoupRealization":
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(1, np.int64),
                   np.zeros((0, d), np.int64), d, alpha_max, **kw)

    @classmethod
    def from_loops(cls, loops: Iterable, arrivals=None, alpha_max: float | None = None,
                   **kw) -> "SoupRealization":
        """Build a realization from point sequences (validated as loops)."""
        pts = [as_points(l.points if hasattr(l, "points") else l) for l in loops]
        for p in pts:
            Loop.from_points(p)
        if not pts:
            d = kw.pop("d", 3)
            return cls.empty(d, alpha_max or 0.0, **kw)
        d = pts[0].shape[1]
        kw.pop("d", None)
        arr = np.zeros(len(pts)) if arrivals is None else np.asarray(arrivals, dtype=float)
        lengths = np.array([len(p) for p in pts], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        amax = float(arr.max(initial=0.0)) if alpha_max is None else alpha_max
        return cls(lengths, arr, offsets, np.concatenate(pts), d, amax, **kw)

    # -- access -------------------------------------------------------------
    def __len__(self) -> int:
        return int(self.lengths.size)

    @property
    def n_loops(self) -> int:
        return len(self)

    @property
    def max_length(self) -> int:
        return int(self.lengths.max(initial=0))

    def loop_points(self, i: int) -> np.ndarray:
        return self.points[self.offsets[i]:self.offsets[i + 1]]

    def loops(self) -> list[Loop]:
        return [Loop.from_points(self.loop_points(i)) for i in range(len(self))]

    def entries(self) -> list[tuple[float, Loop]]:
        return list(zip(self.arrivals.tolist(), self.loops()))

    def loop_index(self) -> np.ndarray:
        """Loop id of every stored point."""
        return np.repeat(np.arange(len(self)), self.lengths)

    def diameters(self) -> np.ndarray:
        if not len(self):
            return np.zeros(0, dtype=np.int64)
        mx = np.maximum.reduceat(self.points, self.offsets[:-1], axis=0)
        mn = np.minimum.reduceat(self.points, self.offsets[:-1], axis=0)
        return (mx - mn).max(axis=1)

    # -- filters ---------------------------------------------------------------
    def select(self, mask: np.ndarray, **changes) -> "SoupRealization":
        mask = np.asarray(mask, dtype=bool)
        pmask = np.repeat(mask, self.lengths)
        lengths = self.lengths[mask]
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        return replace(self, lengths=lengths, arrivals=self.arrivals[mask], offsets=offsets,
                       points=self.points[pmask], **changes)

    def restrict(self, alpha: float) -> "SoupRealization":
        """Loops with arrival ``<= alpha``: the soup at intensity ``alpha``."""
        if alpha > self.alpha_max * (1 + 1e-12) + 1e-300:
            raise ValueError(f"alpha={alpha} above the realization's alpha_max={self.alpha_max}")
        return self.select(self.arrivals <= alpha, alpha_max=float(alpha))

    def kappa_mask(self, alpha: float, kappa: float) -> np.ndarray:
        """Loops present in the soup at ``(alpha, kappa)``, ``kappa >= self.kappa``.

        A loop of length k drawn at killing ``kappa_s`` survives at ``kappa`` iff
        ``arrival * ((1+kappa)/(1+kappa_s))^k <= alpha`` (thinning of the arrivals).
        """
        if kappa < self.kappa:
            raise ValueError("cannot lower kappa below the sampled value")
        if alpha > self.alpha_max * (1 + 1e-12) + 1e-300:
            raise ValueError("alpha above alpha_max")
        scale = np.exp(self.lengths * (math.log1p(kappa) - math.log1p(self.kappa)))
        return self.arrivals * scale <= alpha

    def at(self, alpha: float, kappa: float | None = None) -> "SoupRealization":
        if kappa is None or kappa == self.kappa:
            return self.restrict(alpha)
        return self.select(self.kappa_mask(alpha, kappa), alpha_max=float(alpha), kappa=kappa)

    def split_by_length(self, L: int) -> tuple["SoupRealization", "SoupRealization"]:
        if L < 2:
            raise ValueError("L must be >= 2")
        short = self.lengths <= L
        return self.select(short), self.select(~short)

    def filter_diameter(self, max_diam: int) -> "SoupRealization":
        return self.select(self.diameters() <= max_diam)

    def contained_in(self, w: Window) -> np.ndarray:
        inside = w.contains(self.points) if len(self.points) else np.zeros(0, bool)
        if not len(self):
            return np.zeros(0, dtype=bool)
        return np.logical_and.reduceat(inside, self.offsets[:-1]) if inside.size else inside

    # -- serialisation -------------------------------------------------------
    def to_ndjson(self, fh=None, meta: dict | None = None) -> str | None:
        """One ``{"arrival", "len", "pts"}`` object per loop, after an optional ``{"meta": ...}`` line."""
        lines = [] if meta is None else [json.dumps({"meta": meta}, sort_keys=True)]
        for i in range(len(self)):
            lines.append(json.dumps({"arrival": float(self.arrivals[i]),
                                     "len": int(self.lengths[i]),
                                     "pts": self.loop_points(i).tolist()}))
        text = "".join(l + "\n" for l in lines)
        if fh is None:
            return text
        if isinstance(fh, (str, Path)):
            Path(fh).write_text(text)
        else:
            fh.write(text)
        return None

    @classmethod
    def from_ndjson(cls, src, alpha_max: float | None = None, **kw) -> "SoupRealization":
        """Load an NDJSON loop dump, re-validating every loop (a leading meta line is skipped)."""
        if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src and Path(src).exists()):
            text = Path(src).read_text()
        elif hasattr(src, "read"):
            text = src.read()
        else:
            text = src
        loops, arr = [], []
        for lineno, line in enumerate(io.StringIO(text), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "meta" in obj and not loops:
                continue
            pts = as_points(obj["pts"])
            if len(pts) != obj["len"]:
                raise LoopError(f"line {lineno}: len={obj['len']} but {len(pts)} points")
            if obj["arrival"] < 0:
                raise LoopError(f"line {lineno}: negative arrival")
            loops.append(pts)
            arr.append(float(obj["arrival"]))
        return cls.from_loops(loops, arr, alpha_max=alpha_max, **kw)


def _pack(groups: list[tuple[int, np.ndarray, np.ndarray]], d: int) -> tuple[np.ndarray, ...]:
    """Concatenate per-length groups ``(k, points (c, k, d), arrivals (c,))``."""
    lengths = [np.full(len(a), k, dtype=np.int64) for k, _, a in groups]
    lengths = np.concatenate(lengths) if lengths else np.zeros(0, np.int64)
    arrivals = np.concatenate([a for _, _, a in groups]) if groups else np.zeros(0)
    points = (np.concatenate([p.reshape(-1, d) for _, p, _ in groups])
              if groups else np.zeros((0, d), np.int64))
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    return lengths, arrivals, offsets, points


class _Support:
    """Site set loops must stay in: the window box, optionally cut to a region."""

    def __init__(self, w: Window, region=None):
        self.w = w
        if region is None:
            self.sites = None
            self.n = w.n_sites
            self.mask = None
        else:
            reg = as_points(region, w.d)
            idx = w.index(reg)
            if (idx < 0).any():
                raise ValueError("intensity region leaves the window")
            self.mask = np.zeros(w.n_sites, dtype=bool)
            self.mask[idx] = True
            self.sites = w.point(np.flatnonzero(self.mask))
            self.n = len(self.sites)

    def random_sites(self, count: int, rng) -> np.ndarray:
        if self.sites is None:
            return self.w.point(rng.integers(self.w.n_sites, size=count))
        return self.sites[rng.integers(self.n, size=count)]

    def contains_all(self, pts: np.ndarray) -> np.ndarray:
        """``pts`` is ``(c, k, d)``; True where the whole loop stays in the support."""
        c, k, d = pts.shape
        flat = pts.reshape(-1, d)
        if self.mask is None:
            ok = self.w.contains(flat)
        else:
            idx = self.w.index(flat)
            ok = (idx >= 0) & self.mask[np.maximum(idx, 0)]
        return ok.reshape(c, k).all(axis=1)


def sample_truncated(w: Window, intensity: IntensityFunction, alpha_max: float | None = None,
                     seed: int = 0, replica: int = 0, method: str = "auto") -> SoupRealization:
    """Exact Poisson soup of loops of length ``<= intensity.cutoff`` inside ``w``.

    Loops of length k appear with intensity ``alpha beta_k (1+kappa)^-k mu_0``
    restricted to loops inside the window (and inside ``intensity.region``).

    ``method="thinning"`` draws roots uniformly, a uniform closed walk on Z^d,
    and keeps the loops that stay inside: a Poisson thinning of the rooted
    measure, exact for any window.  ``method="kernel"`` draws the count from
    the exact mass ``m_k``, the root with probability ``p_k^G(x,x)/tr`` and a
    bridge of the killed walk; it needs dense kernels (small supports).
    ``"auto"`` uses the kernel route for supports of at most 400 sites.
    """
    if w.boundary_mode != ABSORBING:
        raise ValueError("truncated soups are drawn on absorbing windows")
    if intensity.cutoff is None:
        raise ValueError("sample_truncated needs a finite length cutoff")
    alpha_max = intensity.alpha if alpha_max is None else float(alpha_max)
    if alpha_max < 0:
        raise ValueError("alpha_max must be non-negative")
    m = intensity.cutoff
    d = w.d
    support = _Support(w, intensity.region)
    if method == "auto":
        method = "kernel" if support.n <= KERNEL_SITE_LIMIT else "thinning"
    if method not in ("kernel", "thinning"):
        raise ValueError(f"unknown method {method!r}")
    shape = IntensityFunction(1.0, intensity.kappa, m, dict(intensity.multipliers))
    groups = []
    stats = {"method": method, "proposed": {}, "accepted": {}}
    bridge = table = None
    if method == "kernel" and alpha_max > 0:
        sites = support.sites if support.sites is not None else w.sites()
        table, bridge = _kernel_tools(sites.tobytes(), sites.shape, m)
    ks = np.arange(2, m + 1, 2)
    rels = shape.length_factor(ks)
    if method == "kernel" and alpha_max > 0:
        # one stream per replica: all counts at once, then roots and bridges per used length
        masses = table.masses[ks // 2 - 1]
        if ((masses > 0) & (masses < 1e-300)).any():
            raise FloatingPointError("loop mass underflows")
        g = rngmod.stream(seed, rngmod.TRUNCATED, replica)
        counts = g.poisson(alpha_max * rels * masses)
        for k, count in zip(ks.tolist(), counts.tolist()):
            stats["proposed"][k] = count
            if not count:
                stats["accepted"][k] = 0
                continue
            rw = table.root_weights(k)
            roots = g.choice(len(rw), size=count, p=rw / rw.sum())
            pts = table.sites[bridge.sample(k, roots, g)]
            groups.append(_finish(k, pts, intensity.max_diam, alpha_max, g, stats))
    elif method == "thinning":
        for k, rel in zip(ks.tolist(), rels.tolist()):
            if alpha_max == 0 or rel == 0:
                continue
            g = rngmod.stream(seed, rngmod.TRUNCATED, replica, k)
            mean = alpha_max * rel * support.n * return_probability(k, d) / k
            proposed = int(g.poisson(mean))
            stats["proposed"][k] = proposed
            roots = support.random_sites(proposed, g)
            pts = roots[:, None, :] + uniform_closed_walks(k, d, proposed, g)
            pts = pts[support.contains_all(pts)]
            groups.append(_finish(k, pts, intensity.max_diam, alpha_max, g, stats))
    lengths, arrivals, offsets, points = _pack(groups, d)
    return SoupRealization(lengths, arrivals, offsets, points, d, alpha_max, intensity.kappa,
                           window=w, reach=m // 2, tail_mass_epsilon=0.0,
                           provenance={"seed": int(seed), "replica": int(replica),
                                       "stream": "truncated"},
                           stats=stats)


def _finish(k: int, pts: np.ndarray, max_diam, alpha_max: float, g, stats: dict) -> tuple:
    if max_diam is not None and len(pts):
        diam = (pts.max(axis=1) - pts.min(axis=1)).max(axis=1)
        pts = pts[diam <= max_diam]
    stats["accepted"][k] = len(pts)
    return k, pts, g.uniform(0.0, alpha_max, size=len(pts))


@lru_cache(maxsize=8)
def _kernel_tools(blob: bytes, shape: tuple, m: int) -> tuple:
    sites = np.frombuffer(blob, dtype=np.int64).reshape(shape)
    table = mass_table(sites=sites, K_max=m, kappa=0.0)
    return table, KilledBridge(transition_matrix(sites).toarray(), m)


@dataclass(frozen=True)
class BasePointProcess:
    """Arrival times and base sites of the loops kept by the window sampler."""

    arrivals: np.ndarray
    sites: np.ndarray
    site_rates: np.ndarray


def sample_window(w: Window, box: Box, alpha_max: float, kappa: float = 0.0, K_max: int = 64,
                  seed: int = 0, replica: int = 0,
                  acceptance_floor: float | None = None) -> SoupRealization:
    """Soup of the loops (length ``<= K_max``) that visit ``box``.

    Base points arrive as a Poisson process on ``[0, alpha_max] x box``; each
    proposes a uniform closed walk rooted there, which is kept with
    probability ``1/N`` where N counts the walk's visits to the box.  The
    kept based loops have intensity ``Q-product / N``, which induces exactly
    the loop measure on loops visiting the box.  In absorbing mode loops
    leaving ``w`` are discarded; in open mode they are kept whole.
    """
    if alpha_max < 0:
        raise ValueError("alpha_max must be non-negative")
    if K_max < 2 or K_max % 2:
        raise ValueError("K_max must be an even integer >= 2")
    d = w.d
    bw = Window.from_box(box)
    if w.boundary_mode == ABSORBING and not (w.contains(bw.lo) & w.contains(bw.hi)).all():
        raise ValueError("box must lie inside the ambient absorbing window")
    rho = 1.0 / (1.0 + kappa)
    nb = box.volume
    groups = []
    proposed_total = accepted_total = 0
    stats = {"proposed": {}, "accepted": {}}
    for k in range(2, K_max + 1, 2):
        if alpha_max == 0:
            break
        g = rngmod.stream(seed, rngmod.WINDOW, replica, k)
        rate = rho ** k * return_probability(k, d)
        proposed = int(g.poisson(alpha_max * nb * rate))
        if not proposed:
            continue
        roots = box.lo + g.integers(0, 2 * box.r + 1, size=(proposed, d))
        pts = roots[:, None, :] + uniform_closed_walks(k, d, proposed, g)
        visits = np.abs(pts - np.asarray(box.center)).max(axis=2) <= box.r
        keep = g.random(proposed) * visits.sum(axis=1) < 1.0
        if w.boundary_mode == ABSORBING:
            keep &= w.contains(pts.reshape(-1, d)).reshape(proposed, k).all(axis=1)
        pts = pts[keep]
        groups.append((k, pts, g.uniform(0.0, alpha_max, size=len(pts))))
        stats["proposed"][k] = proposed
        stats["accepted"][k] = len(pts)
        proposed_total += proposed
        accepted_total += len(pts)
    floor = 0.1 / K_max if acceptance_floor is None else acceptance_floor
    if proposed_total >= 1000 and accepted_total < floor * proposed_total:
        raise RuntimeError(f"window sampler acceptance {accepted_total / proposed_total:.2e} "
                           f"below floor {floor:.2e}")
    stats["acceptance"] = accepted_total / proposed_total if proposed_total else 1.0
    eps = alpha_max * nb * free_tail_bound(K_max, d, kappa, weight_by_length=False)
    lengths, arrivals, offsets, points = _pack(groups, d)
    return SoupRealization(lengths, arrivals, offsets, points, d, float(alpha_max), kappa,
                           window=w, box=box, reach=0, tail_mass_epsilon=float(eps),
                           provenance={"seed": int(seed), "replica": int(replica),
                                       "stream": "window"},
                           stats=stats)


def base_points(s: SoupRealization) -> BasePointProcess:
    """Base points (first stored point) of a window-sampler realization."""
    sites = s.points[s.offsets[:-1]] if len(s) else np.zeros((0, s.d), np.int64)
    d = s.d
    rates = np.array([0.0])
    if s.box is not None:
        K = s.max_length
        rho = 1.0 / (1.0 + s.kappa)
        rates = np.full(s.box.volume, sum(rho ** k * return_probability(k, d)
                                          for k in range(2, K + 1, 2)))
    return BasePointProcess(s.arrivals.copy(), sites, rates)


def restrict(s: SoupRealization, alpha: float) -> SoupRealization:
    return s.restrict(alpha)


def split_by_length(s: SoupRealization, L: int) -> tuple[SoupRealization, SoupRealization]:
    return s.split_by_length(L)


def edge_soup(w: Window, edges: np.ndarray | None = None, arrival: float = 0.0,
              alpha_max: float = 1.0) -> SoupRealization:
    """One length-2 loop per edge ``(lower index, axis)`` of ``w`` (all edges by default).

    Builds deterministic configurations, e.g. a fully open window, without
    per-loop validation.
    """
    u, ax = w.edges() if edges is None else (np.asarray(edges[0]), np.asarray(edges[1]))
    v = u + w.strides[ax]
    n = u.size
    pts = np.empty((2 * n, w.d), dtype=np.int64)
    pts[0::2] = w.point(u)
    pts[1::2] = w.point(v)
    return SoupRealization(np.full(n, 2, np.int64), np.full(n, float(arrival)),
                           np.arange(0, 2 * n + 1, 2, dtype=np.int64), pts, w.d, alpha_max,
                           window=w, provenance={"stream": "edge-soup"})
