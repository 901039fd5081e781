"""Loop measure calculus for simple random walk loops on Z^d.

A based loop ``(x_1, ..., x_n)`` of nearest-neighbour points carries weight
``(1/n) (1 + kappa)^-n (2d)^-n``; a loop is its rotation class and its mass is
the sum over the distinct rotations.  Masses of loops inside a window are
traces of powers of the killed kernel, and masses of loops hitting a set are
log-determinants of Green functions.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.special import gammaln, ive

from .lattice import ABSORBING, OPEN_TAIL, Box, Window, as_points

CACHE_FORMAT_VERSION = 1
DENSE_SITE_LIMIT = 3000


class LoopError(ValueError):
    """Raised for point sequences that are not lattice loops."""


def _check_loop(points: np.ndarray) -> None:
    n = len(points)
    if n < 2:
        raise LoopError("a based loop needs at least two points")
    steps = np.roll(points, -1, axis=0) - points
    if not (np.abs(steps).sum(axis=1) == 1).all():
        raise LoopError("consecutive points (including the wrap) must be lattice neighbours")


def canonical_rotation(points: np.ndarray) -> tuple[np.ndarray, int]:
    """Lexicographically minimal rotation and the loop's multiplicity.

    The multiplicity is ``n / period``; a primitive loop has multiplicity 1.
    """
    pts = [tuple(int(c) for c in p) for p in points]
    n = len(pts)
    rotations = [tuple(pts[i:] + pts[:i]) for i in range(n)]
    best = min(range(n), key=lambda i: rotations[i])
    distinct = len(set(rotations))
    return np.asarray(rotations[best], dtype=np.int64), n // distinct


@dataclass(frozen=True, eq=False)
class BasedLoop:
    points: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points)
        _check_loop(pts)
        object.__setattr__(self, "points", pts)

    @property
    def length(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def rotations(self) -> list["BasedLoop"]:
        return [BasedLoop(np.roll(self.points, -i, axis=0)) for i in range(self.length)]

    def loop(self) -> "Loop":
        return Loop.from_points(self.points)


@dataclass(frozen=True)
class Loop:
    """Unrooted loop, identified by its minimal rotation (hashable)."""

    canonical: tuple[tuple[int, ...], ...]
    multiplicity: int = 1

    @classmethod
    def from_points(cls, points) -> "Loop":
        pts = as_points(points)
        _check_loop(pts)
        can, mult = canonical_rotation(pts)
        return cls(tuple(tuple(int(c) for c in p) for p in can), mult)

    @property
    def length(self) -> int:
        return len(self.canonical)

    @property
    def d(self) -> int:
        return len(self.canonical[0])

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.canonical, dtype=np.int64)

    @property
    def diam(self) -> int:
        p = self.points
        return int((p.max(axis=0) - p.min(axis=0)).max())

    @property
    def n_rotations(self) -> int:
        return self.length // self.multiplicity

    def vertices(self) -> set[tuple[int, ...]]:
        return set(self.canonical)

    def edges(self) -> set[tuple[tuple[int, ...], tuple[int, ...]]]:
        pts = self.canonical
        return {tuple(sorted((pts[i], pts[(i + 1) % len(pts)]))) for i in range(len(pts))}


def based_weight(loop: BasedLoop | Sequence, kappa: float = 0.0) -> float:
    """``(1/n) (1+kappa)^-n (2d)^-n`` for a based loop of length n."""
    b = loop if isinstance(loop, BasedLoop) else BasedLoop(loop)
    n, d = b.length, b.d
    return math.exp(-math.log(n) - n * math.log1p(kappa) - n * math.log(2 * d))


def loop_mass(loop: Loop | BasedLoop | Sequence, kappa: float = 0.0) -> float:
    """Mass of a loop class: distinct rotations times the based weight."""
    if not isinstance(loop, Loop):
        pts = loop.points if isinstance(loop, BasedLoop) else loop
        loop = Loop.from_points(pts)
    n, d = loop.length, loop.d
    return loop.n_rotations * math.exp(-math.log(n) - n * math.log1p(kappa) - n * math.log(2 * d))


@dataclass(frozen=True)
class IntensityFunction:
    """Loop intensity ``alpha * beta_{|l|/2} * (1+kappa)^-|l|`` on an allowed support.

    ``cutoff`` bounds the number of jumps (None means no bound), ``multipliers``
    maps a half-length ``i`` to ``beta_i`` (default 1) and ``region`` is an
    optional ``(n, d)`` site array the loops must stay inside.
    """

    alpha: float = 1.0
    kappa: float = 0.0
    cutoff: int | None = None
    multipliers: Mapping[int, float] = field(default_factory=dict)
    region: np.ndarray | None = None
    max_diam: int | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.kappa < 0:
            raise ValueError("alpha and kappa must be non-negative")
        if self.cutoff is not None and (self.cutoff < 2 or self.cutoff % 2):
            raise ValueError("length cutoff must be a positive even integer")
        if any(v < 0 for v in self.multipliers.values()):
            raise ValueError("multipliers must be non-negative")

    def length_factor(self, k) -> np.ndarray:
        """Per-length factor relative to the kappa=0 measure (region ignored)."""
        k = np.asarray(k, dtype=np.int64)
        f = self.alpha * np.exp(-k * math.log1p(self.kappa))
        mult = np.array([self.multipliers.get(int(kk) // 2, 1.0) for kk in np.ravel(k)])
        f = f * mult.reshape(k.shape)
        if self.cutoff is not None:
            f = np.where(k <= self.cutoff, f, 0.0)
        return np.where(k % 2 == 0, f, 0.0)

    def region_set(self) -> set[tuple[int, ...]] | None:
        if self.region is None:
            return None
        return {tuple(int(c) for c in p) for p in as_points(self.region)}

    def __call__(self, loop: Loop) -> float:
        if self.max_diam is not None and loop.diam > self.max_diam:
            return 0.0
        reg = self.region_set()
        if reg is not None and not loop.vertices() <= reg:
            return 0.0
        return float(self.length_factor(loop.length))

    def measure(self, loop: Loop) -> float:
        """Intensity measure of a single loop class: ``beta(l) mu_0(l)``."""
        return self(loop) * loop_mass(loop, 0.0)


# ---------------------------------------------------------------------------
# Free closed walks on Z^d

@lru_cache(maxsize=None)
def allocations(k: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Even compositions of ``k`` into ``d`` parts and their log closed-walk counts.

    A closed walk of length k splits its steps among the axes; the number of
    closed walks with split ``(k_1..k_d)`` is ``k!/prod k_i! * prod C(k_i, k_i/2)``.
    """
    if k % 2:
        return np.zeros((0, d), dtype=np.int64), np.zeros(0)
    half = k // 2
    rows = []

    def rec(prefix, left, slots):
        if slots == 1:
            rows.append(prefix + [left])
            return
        for j in range(left + 1):
            rec(prefix + [j], left - j, slots - 1)

    rec([], half, d)
    parts = 2 * np.asarray(rows, dtype=np.int64)
    logc = (gammaln(k + 1) - gammaln(parts + 1).sum(axis=1)
            + (gammaln(parts + 1) - 2 * gammaln(parts // 2 + 1)).sum(axis=1))
    parts.setflags(write=False)
    logc.setflags(write=False)
    return parts, logc


@lru_cache(maxsize=None)
def log_closed_walks(k: int, d: int) -> float:
    """log of the number of closed nearest-neighbour walks of length k from 0."""
    if k % 2:
        return -math.inf
    _, logc = allocations(k, d)
    m = logc.max()
    return float(m + np.log(np.exp(logc - m).sum()))


def return_probability(k: int, d: int) -> float:
    """``p_k(0, 0)`` for simple random walk on Z^d."""
    if k == 0:
        return 1.0
    return math.exp(log_closed_walks(k, d) - k * math.log(2 * d))


def free_tail_bound(K: int, d: int, kappa: float = 0.0, weight_by_length: bool = True) -> float:
    """Upper estimate of ``sum_{k>K} (1+kappa)^-k p_k(0,0) / k`` (or without 1/k).

    Uses ``p_{2j}(0,0) <= C j^{-d/2}`` with C the larger of the local-CLT
    constant and the worst ratio observed on ``j <= K/2``.
    """
    j = np.arange(1, K // 2 + 1)
    local_clt = 2.0 * (d / (4.0 * math.pi)) ** (d / 2)
    observed = max((return_probability(2 * jj, d) * jj ** (d / 2) for jj in j), default=0.0)
    C = max(local_clt, observed)
    rho = 1.0 / (1.0 + kappa)
    total = 0.0
    jj = K // 2 + 1
    while True:
        term = C * jj ** (-d / 2) * rho ** (2 * jj)
        if weight_by_length:
            term /= 2 * jj
        total += term
        if term < 1e-16 * max(total, 1e-300) or jj > K // 2 + 10**7:
            break
        if rho == 1.0 and jj > 200 * (K // 2 + 1):
            # remaining power-law tail by integral comparison
            p = d / 2 + (1 if weight_by_length else 0)
            total += C * (0.5 if weight_by_length else 1.0) * jj ** (1 - p) / (p - 1)
            break
        jj += 1
    return total


# ---------------------------------------------------------------------------
# Killed kernels and mass tables

def transition_matrix(sites) -> sps.csr_matrix:
    """SRW kernel ``Q = 1/(2d)`` between lattice neighbours within ``sites`` (killed outside)."""
    pts = as_points(sites)
    n, d = pts.shape
    pos = {tuple(p): i for i, p in enumerate(pts.tolist())}
    rows, cols = [], []
    for i, p in enumerate(pts.tolist()):
        for a in range(d):
            for s in (1, -1):
                q = list(p)
                q[a] += s
                j = pos.get(tuple(q))
                if j is not None:
                    rows.append(i)
                    cols.append(j)
    data = np.full(len(rows), 1.0 / (2 * d))
    return sps.csr_matrix((data, (rows, cols)), shape=(n, n))


def window_transition_matrix(w: Window) -> sps.csr_matrix:
    n, d = w.n_sites, w.d
    rows, cols = [], []
    for a in range(d):
        s = w.sites()
        ok = np.flatnonzero(s[:, a] < w.hi[a])
        j = ok + w.strides[a]
        rows += [ok, j]
        cols += [j, ok]
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return sps.csr_matrix((np.full(r.size, 1.0 / (2 * d)), (r, c)), shape=(n, n))


def _path_return_counts(s: int, K: int) -> np.ndarray:
    """``q[j, x]``: probability a 1D SRW on ``{0..s-1}`` (killed outside) returns to x at step j."""
    q = np.zeros((K + 1, s))
    A = np.zeros((s, s))
    idx = np.arange(s - 1)
    A[idx, idx + 1] = A[idx + 1, idx] = 0.5
    M = np.eye(s)
    q[0] = 1.0
    for j in range(1, K + 1):
        M = M @ A
        q[j] = np.diag(M)
    return q


@dataclass
class LoopMassTable:
    """Exact per-length loop masses of a killed window (lengths 2, 4, ..., K_max)."""

    window_key: dict
    kappa: float
    K_max: int
    lengths: np.ndarray
    masses: np.ndarray
    diag: np.ndarray
    spectral_radius: float
    tail_bound: float
    sites: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def mass(self, k: int) -> float:
        if k % 2 or k < 2 or k > self.K_max:
            return 0.0
        return float(self.masses[k // 2 - 1])

    def root_weights(self, k: int) -> np.ndarray:
        """``p_k^G(x, x)`` over the window sites (unnormalised root law)."""
        return self.diag[k // 2 - 1]

    def cache_key(self) -> str:
        blob = json.dumps({"v": CACHE_FORMAT_VERSION, "w": self.window_key,
                           "kappa": self.kappa, "K": self.K_max}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:20]

    def save(self, path) -> Path:
        path = Path(path)
        meta = {"version": CACHE_FORMAT_VERSION, "window": self.window_key,
                "kappa": self.kappa, "K_max": self.K_max,
                "spectral_radius": self.spectral_radius, "tail_bound": self.tail_bound}
        arrays = dict(lengths=self.lengths, masses=self.masses, diag=self.diag,
                      meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))
        if self.sites is not None:
            arrays["sites"] = self.sites
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path) -> "LoopMassTable":
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            if meta.get("version") != CACHE_FORMAT_VERSION:
                raise ValueError(f"unsupported mass-table cache version {meta.get('version')}")
            return cls(meta["window"], meta["kappa"], meta["K_max"], z["lengths"],
                       z["masses"], z["diag"], meta["spectral_radius"], meta["tail_bound"],
                       z["sites"] if "sites" in z.files else None)


def _diag_powers_dense(P: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((K // 2, P.shape[0]))
    M = np.eye(P.shape[0])
    for k in range(1, K + 1):
        M = M @ P
        if k % 2 == 0:
            out[k // 2 - 1] = np.diag(M)
    return out


def _diag_powers_box(w: Window, K: int) -> np.ndarray:
    d = w.d
    qs = [_path_return_counts(s, K) for s in w.shape]
    out = np.zeros((K // 2, w.n_sites))
    for k in range(2, K + 1, 2):
        parts, _ = allocations(k, d)
        # multinomial(k; parts) d^-k : probability of this split of steps among axes
        logw = gammaln(k + 1) - gammaln(parts + 1).sum(axis=1) - k * math.log(d)
        acc = np.zeros(w.shape)
        for row, lw in zip(parts, logw):
            term = np.exp(lw)
            vecs = [qs[a][row[a]] for a in range(d)]
            outer = vecs[0]
            for v in vecs[1:]:
                outer = np.multiply.outer(outer, v)
            acc += term * outer
        out[k // 2 - 1] = acc.ravel()
    return out


def mass_table(w: Window | None = None, K_max: int = 8, kappa: float | None = None,
               sites=None) -> LoopMassTable:
    """Exact loop masses ``m_k = (1/k)(1+kappa)^-k tr(P^k)`` for even ``k <= K_max``.

    ``w`` is a box window (separable kernel, any size within memory) or
    ``sites`` an explicit small site set (dense kernel).  The reported tail
    bound is ``N rho^(K+1) / ((K+1)(1-rho))`` with ``rho`` the spectral radius
    of the killed, discounted kernel.
    """
    if K_max < 2:
        raise ValueError("K_max must be >= 2")
    K_max -= K_max % 2
    if sites is not None:
        pts = as_points(sites)
        kappa = 0.0 if kappa is None else kappa
        if len(pts) > DENSE_SITE_LIMIT:
            raise ValueError("site set too large for dense kernel storage")
        P = transition_matrix(pts).toarray()
        diag = _diag_powers_dense(P, K_max)
        rho0 = float(np.abs(np.linalg.eigvalsh(P)).max()) if len(pts) else 0.0
        key = {"sites": pts.tolist()}
        n = len(pts)
    else:
        if w is None:
            raise ValueError("need a window or a site set")
        if w.boundary_mode != ABSORBING:
            raise ValueError("mass tables need an absorbing window")
        kappa = w.kappa if kappa is None else kappa
        if w.n_sites * (K_max // 2) > 5 * 10**8:
            raise ValueError("window too large for kernel storage")
        diag = _diag_powers_box(w, K_max)
        rho0 = float(np.mean([math.cos(math.pi / (s + 1)) for s in w.shape])) if w.n_sites > 1 else 0.0
        key = w.key()
        n = w.n_sites
        pts = None
    ks = np.arange(2, K_max + 1, 2)
    disc = np.exp(-ks * math.log1p(kappa))
    masses = disc * diag.sum(axis=1) / ks
    rho = rho0 / (1.0 + kappa)
    tail = n * rho ** (K_max + 1) / ((K_max + 1) * (1 - rho)) if rho < 1 else math.inf
    return LoopMassTable(key, float(kappa), K_max, ks, masses, diag, rho, tail, pts)


# ---------------------------------------------------------------------------
# Green functions and one-loop connection masses

def lattice_green(offsets, d: int, kappa: float = 0.0) -> np.ndarray:
    """Green function ``sum_k (1+kappa)^-k p_k(0, x)`` of SRW on Z^d (d >= 3 or kappa > 0).

    Evaluated through ``int_0^inf e^{-t kappa/(1+kappa)} prod_i ive(x_i, t/(d(1+kappa))) dt``.
    """
    if d < 3 and kappa == 0:
        raise ValueError("the Green function is infinite for recurrent walks")
    offs = np.abs(as_points(offsets, d))
    keys = [tuple(sorted(o)) for o in offs.tolist()]
    c = kappa / (1.0 + kappa)
    scale = 1.0 / (d * (1.0 + kappa))
    cache: dict[tuple, float] = {}
    for key in set(keys):
        x = np.asarray(key, dtype=float)
        f = lambda t: math.exp(-c * t) * float(np.prod(ive(x, t * scale)))
        a, _ = quad(f, 0, 50, limit=200, epsabs=1e-14, epsrel=1e-13)
        b, _ = quad(f, 50, np.inf, limit=400, epsabs=1e-14, epsrel=1e-13)
        cache[key] = a + b
    return np.array([cache[k] for k in keys])


def green_matrix_free(points, kappa: float = 0.0) -> np.ndarray:
    pts = as_points(points)
    diff = pts[:, None, :] - pts[None, :, :]
    flat = diff.reshape(-1, pts.shape[1])
    return lattice_green(flat, pts.shape[1], kappa).reshape(len(pts), len(pts))


def green_matrix_window(w: Window, points, kappa: float | None = None) -> np.ndarray:
    """Green function of the walk killed outside ``w``, restricted to ``points``."""
    kappa = w.kappa if kappa is None else kappa
    P = window_transition_matrix(w) / (1.0 + kappa)
    idx = w.index(points)
    if (idx < 0).any():
        raise ValueError("points outside the window")
    M = (sps.identity(w.n_sites, format="csc") - P.tocsc())
    rhs = np.zeros((w.n_sites, len(idx)))
    rhs[idx, np.arange(len(idx))] = 1.0
    sol = spla.splu(M).solve(rhs)
    return sol[idx, :]


def _logdet_spd(G: np.ndarray) -> float:
    if G.size == 0:
        return 0.0
    L = np.linalg.cholesky(G)
    return float(2.0 * np.log(np.diag(L)).sum())


def _set_of(points) -> set[tuple[int, ...]]:
    return {tuple(p) for p in as_points(points).tolist()}


def _trace_powers(P: np.ndarray, K: int) -> np.ndarray:
    if P.shape[0] == 0:
        return np.zeros(K + 1)
    ev = np.linalg.eigvalsh(P)
    return np.array([np.sum(ev ** k) for k in range(K + 1)])


@dataclass(frozen=True)
class ConnectionMass:
    value: float
    truncation_bound: float
    method: str


def one_loop_connection_mass(A, B, w: Window | None = None, K_max: int | None = None,
                             kappa: float | None = None) -> ConnectionMass:
    """Mass of loops meeting both site sets ``A`` and ``B``.

    With ``K_max`` the loops are restricted to lengths ``<= K_max`` inside the
    absorbing window ``w`` and the mass is the inclusion-exclusion of kernel
    traces (dense; small windows).  Without ``K_max`` the untruncated mass is
    returned through Green-function log-determinants,
    ``log det G_A + log det G_B - log det G_{A u B}``, on ``w`` (absorbing) or on
    Z^d (``w`` None or open mode).  When ``B`` is the boundary shell of a box
    whose interior holds ``A``, the cheaper identity
    ``log det G_A - log det G^{box interior}_A`` is used.
    """
    A = as_points(A)
    B = as_points(B)
    d = A.shape[1]
    kappa = (w.kappa if w is not None else 0.0) if kappa is None else kappa
    sa, sb = _set_of(A), _set_of(B)
    if sa & sb:
        raise ValueError("A and B must be disjoint")
    if K_max is not None:
        if w is None or w.boundary_mode != ABSORBING:
            raise ValueError("truncated connection masses need an absorbing window")
        if w.n_sites > DENSE_SITE_LIMIT:
            raise ValueError("window too large for the dense trace route")
        P = window_transition_matrix(w).toarray() / (1.0 + kappa)
        ia, ib = w.index(A), w.index(B)
        if (ia < 0).any() or (ib < 0).any():
            raise ValueError("A and B must lie in the window")
        keep = np.ones(w.n_sites, dtype=bool)

        def tr(removed):
            k = keep.copy()
            k[removed] = False
            return _trace_powers(P[np.ix_(k, k)], K_max)

        comb = (tr([]) - tr(ia) - tr(ib) + tr(np.concatenate([ia, ib])))
        ks = np.arange(2, K_max + 1, 2)
        value = float(np.sum(comb[ks] / ks))
        rho = float(np.abs(np.linalg.eigvalsh(P)).max())
        bound = (w.n_sites * rho ** (K_max + 1) / ((K_max + 1) * (1 - rho))) if rho < 1 else math.inf
        return ConnectionMass(max(value, 0.0), bound, "trace")

    free = w is None or w.boundary_mode == OPEN_TAIL
    shell = _box_shell(B, sa)
    if shell is not None:
        lo, hi = shell.lo + 1, shell.hi - 1
        if not free:
            lo, hi = np.maximum(lo, w.lo), np.minimum(hi, w.hi)
        inner = Window(lo, hi, ABSORBING, kappa)
        GA = green_matrix_free(A, kappa) if free else green_matrix_window(w, A, kappa)
        GA_in = green_matrix_window(inner, A, kappa)
        return ConnectionMass(_logdet_spd(GA) - _logdet_spd(GA_in), 0.0, "green-shell")
    AB = np.concatenate([A, B])
    G = green_matrix_free(AB, kappa) if free else green_matrix_window(w, AB, kappa)
    na = len(A)
    val = _logdet_spd(G[:na, :na]) + _logdet_spd(G[na:, na:]) - _logdet_spd(G)
    return ConnectionMass(max(val, 0.0), 0.0, "green")


def _box_shell(B: np.ndarray, inner_set: set) -> Box | None:
    """The box whose boundary is exactly ``B`` and whose interior contains ``inner_set``."""
    lo, hi = B.min(axis=0), B.max(axis=0)
    side = hi - lo
    if (side != side[0]).any() or side[0] % 2 or side[0] < 2:
        return None
    b = Box(tuple((lo + hi) // 2), side[0] // 2)
    if len(B) != len(_set_of(B)) or len(B) != b.volume - (2 * b.r - 1) ** b.d:
        return None
    if not b.on_boundary(B).all():
        return None
    inner = np.asarray(sorted(inner_set))
    if not (np.abs(inner - np.asarray(b.center)).max(axis=1) < b.r).all():
        return None
    return b
