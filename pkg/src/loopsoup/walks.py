"""Exact samplers for closed nearest-neighbour walks.

All based loops of a given length have the same weight, so a loop of length
k rooted at x is a uniform closed walk.  On Z^d it is drawn without any
kernel: pick the split of steps among the axes with probability proportional
to its closed-walk count, then shuffle the step multiset
``{+e_i, -e_i} x (k_i / 2)``.  On small killed windows the bridge is built
step by step from dense kernel powers instead.
"""
from __future__ import annotations

import numpy as np

from .loop_model import allocations


def step_vectors(d: int) -> np.ndarray:
    """Step codes ``2a`` -> ``+e_a`` and ``2a + 1`` -> ``-e_a``."""
    v = np.zeros((2 * d, d), dtype=np.int64)
    for a in range(d):
        v[2 * a, a] = 1
        v[2 * a + 1, a] = -1
    return v


def uniform_closed_walks(k: int, d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``(count, k, d)`` displacements of uniform closed walks of length k (first point 0)."""
    if k % 2 or k < 2:
        raise ValueError("closed walks have even length >= 2")
    if count == 0:
        return np.zeros((0, k, d), dtype=np.int64)
    parts, logc = allocations(k, d)
    p = np.exp(logc - logc.max())
    choice = rng.choice(len(parts), size=count, p=p / p.sum())
    halves = parts[choice] // 2
    # code boundaries: for axis a, k_a/2 plus-steps then k_a/2 minus-steps
    bounds = np.cumsum(np.repeat(halves, 2, axis=1), axis=1)
    j = np.arange(k)
    codes = (j[None, :, None] >= bounds[:, None, :]).sum(axis=2)
    perm = np.argsort(rng.random((count, k)), axis=1)
    codes = np.take_along_axis(codes, perm, axis=1)
    steps = step_vectors(d)[codes]
    disp = np.zeros((count, k, d), dtype=np.int64)
    np.cumsum(steps[:, :-1], axis=1, out=disp[:, 1:])
    return disp


class KilledBridge:
    """Exact loop bridges for the SRW killed outside a small site set.

    ``powers[r]`` is the dense ``Q^r``; the step from x toward root y with r
    steps left goes to z with probability ``Q(x,z) Q^{r-1}(z,y) / Q^r(x,y)``.
    """

    def __init__(self, P: np.ndarray, K: int):
        self.P = P
        self.powers = [np.eye(P.shape[0])]
        for _ in range(K):
            self.powers.append(self.powers[-1] @ P)

    def sample(self, k: int, roots: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Site-index paths ``(len(roots), k)`` of closed walks of length k."""
        n = len(roots)
        out = np.empty((n, k), dtype=np.int64)
        out[:, 0] = roots
        cur = roots.copy()
        u = rng.random((n, max(k - 1, 1)))
        for j in range(1, k):
            # after x_j, k - j steps remain to close the loop at the root
            w = self.P[cur] * self.powers[k - j][:, roots].T
            cdf = np.cumsum(w, axis=1)
            thr = (1.0 - u[:, j - 1]) * cdf[:, -1]
            cur = (thr[:, None] > cdf).sum(axis=1)
            out[:, j] = cur
        return out
