"""Integer-lattice geometry: boxes, slabs, sub-box grids and finite windows.

Points are integer tuples (or ``(n, d)`` integer arrays).  Windows are
axis-aligned rectangles of sites with a dense linear indexing, which is what
every hot path downstream (edge bitsets, union-find arrays) works with.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_WINDOW_SITES = 2**31

ABSORBING = "absorbing"
OPEN_TAIL = "open-with-tail-cutoff"
BOUNDARY_MODES = (ABSORBING, OPEN_TAIL)


def as_points(points, d: int | None = None) -> np.ndarray:
    """Coerce a point or sequence of points to an ``(n, d)`` int64 array."""
    arr = np.asarray(points, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if d is not None and arr.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got {arr.shape[-1]}")
    return arr


def unit(d: int, axis: int, sign: int = 1) -> tuple[int, ...]:
    v = [0] * d
    v[axis] = sign
    return tuple(v)


def sup_norm(points) -> np.ndarray:
    return np.abs(as_points(points)).max(axis=1)


@dataclass(frozen=True)
class Box:
    """Cubic box ``center + {-r, ..., r}^d`` (the radius is floored)."""

    center: tuple[int, ...]
    radius: float = 0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        if self.radius < 0:
            raise ValueError("box radius must be non-negative")

    @classmethod
    def at_origin(cls, radius: float, d: int) -> "Box":
        return cls((0,) * d, radius)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def r(self) -> int:
        return int(np.floor(self.radius))

    @property
    def volume(self) -> int:
        return (2 * self.r + 1) ** self.d

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.int64) - self.r

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.int64) + self.r

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.d)
        return (np.abs(p - np.asarray(self.center)) <= self.r).all(axis=1)

    def on_boundary(self, points) -> np.ndarray:
        p = as_points(points, self.d)
        return np.abs(p - np.asarray(self.center)).max(axis=1) == self.r

    def sites(self) -> np.ndarray:
        return box_sites(self)

    def boundary_sites(self) -> np.ndarray:
        s = box_sites(self)
        return s[self.on_boundary(s)]


def box_sites(b: Box) -> np.ndarray:
    """All sites of ``b`` as an ``(n, d)`` array in lexicographic order."""
    axes = [np.arange(c - b.r, c + b.r + 1, dtype=np.int64) for c in b.center]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def subbox_of(p, m: int) -> tuple[int, ...]:
    """Index vector k of the cell ``B^(m)(k) = prod [k_i m, (k_i + 1) m)`` holding ``p``.

    Floor division, so negative coordinates round toward minus infinity and
    the cells tile all of Z^d.
    """
    if m < 1:
        raise ValueError("cell side must be >= 1")
    return tuple(int(x) // m for x in np.asarray(p, dtype=np.int64).ravel())


def subbox_sites(k: Sequence[int], m: int) -> np.ndarray:
    lo = np.asarray(k, dtype=np.int64) * m
    return Window(lo, lo + m - 1).sites()


@dataclass(frozen=True)
class Slab:
    """``Z_+^2 x {0, ..., m}^(d-2)`` (quarter mode) or ``Z^2 x {0..m}^(d-2)`` (plane mode)."""

    width: int
    d: int = 3
    confined: tuple[int, ...] | None = None
    quarter: bool = True

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("slab width must be positive")
        if self.d < 2:
            raise ValueError("slabs need d >= 2")
        if self.confined is None:
            object.__setattr__(self, "confined", tuple(range(2, self.d)))
        if len(self.confined) != self.d - 2:
            raise ValueError("a slab confines exactly d - 2 coordinates")

    @property
    def free_axes(self) -> tuple[int, ...]:
        return tuple(a for a in range(self.d) if a not in self.confined)

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.d)
        ok = np.ones(len(p), dtype=bool)
        for a in self.confined:
            ok &= (p[:, a] >= 0) & (p[:, a] <= self.width)
        if self.quarter:
            for a in self.free_axes:
                ok &= p[:, a] >= 0
        return ok

    def window(self, extent: int) -> "Window":
        """Finite piece of the slab with the free coordinates in ``[0, extent]``."""
        lo = np.zeros(self.d, dtype=np.int64)
        hi = np.empty(self.d, dtype=np.int64)
        for a in range(self.d):
            hi[a] = self.width if a in self.confined else extent
        if not self.quarter:
            for a in self.free_axes:
                lo[a] = -extent
        return Window(lo, hi)


def slab_contains(s: Slab, p) -> bool | np.ndarray:
    res = s.contains(p)
    return bool(res[0]) if np.ndim(p) == 1 else res


@dataclass(frozen=True, eq=False)
class Window:
    """Axis-aligned finite simulation domain ``[lo, hi]`` (inclusive) in Z^d.

    Sites carry a row-major linear index; the edge ``{x, x + e_a}`` has slot
    ``index(x) * d + a``.
    """

    lo: np.ndarray
    hi: np.ndarray
    boundary_mode: str = ABSORBING
    kappa: float = 0.0
    strides: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.int64).ravel()
        hi = np.asarray(self.hi, dtype=np.int64).ravel()
        if lo.shape != hi.shape or lo.size < 1:
            raise ValueError("lo/hi must be non-empty and of equal dimension")
        if (hi < lo).any():
            raise ValueError("empty window")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ValueError(f"boundary_mode must be one of {BOUNDARY_MODES}")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        shape = hi - lo + 1
        if np.prod(shape.astype(float)) >= MAX_WINDOW_SITES:
            raise ValueError("window exceeds 2^31 sites")
        strides = np.ones(lo.size, dtype=np.int64)
        for a in range(lo.size - 2, -1, -1):
            strides[a] = strides[a + 1] * shape[a + 1]
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "strides", strides)

    @classmethod
    def around(cls, radius: int, d: int, center=None, **kw) -> "Window":
        c = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center)
        return cls(c - radius, c + radius, **kw)

    @classmethod
    def from_box(cls, b: Box, **kw) -> "Window":
        return cls(b.lo, b.hi, **kw)

    def __eq__(self, other):
        return (isinstance(other, Window) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi)
                and self.boundary_mode == other.boundary_mode
                and self.kappa == other.kappa)

    def __hash__(self):
        return hash((tuple(self.lo), tuple(self.hi), self.boundary_mode, self.kappa))

    @property
    def d(self) -> int:
        return int(self.lo.size)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(s) for s in self.hi - self.lo + 1)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_edge_slots(self) -> int:
        return self.n_sites * self.d

    def key(self) -> dict:
        return {"d": self.d, "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "boundary_mode": self.boundary_mode, "kappa": self.kappa}

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.d)
        return ((p >= self.lo) & (p <= self.hi)).all(axis=1)

    def index(self, points) -> np.ndarray:
        """Linear site index, or -1 for points outside the window."""
        p = as_points(points, self.d)
        idx = (p - self.lo) @ self.strides
        return np.where(self.contains(p), idx, -1)

    def point(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=np.int64)
        out = np.empty(idx.shape + (self.d,), dtype=np.int64)
        rem = idx.copy()
        for a in range(self.d):
            out[..., a], rem = np.divmod(rem, self.strides[a])
        return out + self.lo

    def sites(self) -> np.ndarray:
        return self.point(np.arange(self.n_sites))

    def on_boundary(self, points) -> np.ndarray:
        p = as_points(points, self.d)
        return ((p == self.lo) | (p == self.hi)).any(axis=1)

    def boundary_indices(self) -> np.ndarray:
        s = self.sites()
        return np.flatnonzero(self.on_boundary(s))

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """All internal edges as ``(lower endpoint index, axis)`` arrays."""
        s = self.sites()
        low, ax = [], []
        for a in range(self.d):
            ok = np.flatnonzero(s[:, a] < self.hi[a])
            low.append(ok)
            ax.append(np.full(ok.size, a, dtype=np.int64))
        return np.concatenate(low), np.concatenate(ax)

    def edge_slots(self) -> np.ndarray:
        low, ax = self.edges()
        return np.sort(low * self.d + ax)

    def sub_window(self, lo, hi) -> "Window":
        return Window(lo, hi, self.boundary_mode, self.kappa)

    def with_margin(self, margin: int) -> "Window":
        return Window(self.lo - margin, self.hi + margin, self.boundary_mode, self.kappa)


def neighbors(points) -> np.ndarray:
    """``(n, 2d, d)`` array of the lattice neighbours of each point."""
    p = as_points(points)
    d = p.shape[1]
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    return p[:, None, :] + steps[None, :, :]


def lattice_edges(points: Iterable) -> list[tuple[int, int]]:
    """Nearest-neighbour pairs ``(i, j)``, ``i < j``, among a small point list."""
    pts = [tuple(int(c) for c in p) for p in points]
    pos = {p: i for i, p in enumerate(pts)}
    out = []
    for i, p in enumerate(pts):
        for a in range(len(p)):
            q = tuple(c + (1 if b == a else 0) for b, c in enumerate(p))
            j = pos.get(q)
            if j is not None:
                out.append((min(i, j), max(i, j)))
    return sorted(out)


def cube_corner_window(n: int, d: int) -> "Window":
    """``[0, n]^d``."""
    return Window(np.zeros(d, dtype=np.int64), np.full(d, n, dtype=np.int64))


def iter_cells(lo: Sequence[int], hi: Sequence[int]):
    """Iterate index vectors in the inclusive integer rectangle ``[lo, hi]``."""
    return itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)])
