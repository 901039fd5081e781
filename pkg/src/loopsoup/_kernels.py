"""Compiled graph kernels: union-find labelling, incremental connection times and BFS."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def union_find_labels(n, us, vs):
    """Component label per node; the label is the smallest node index in the component."""
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for e in range(us.size):
        a = _find(parent, us[e])
        b = _find(parent, vs[e])
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    root = np.empty(n, dtype=np.int64)
    for x in range(n):
        root[x] = _find(parent, x)
    smallest = np.full(n, n, dtype=np.int64)
    for x in range(n):
        if x < smallest[root[x]]:
            smallest[root[x]] = x
    labels = np.empty(n, dtype=np.int64)
    for x in range(n):
        labels[x] = smallest[root[x]]
    return labels


@numba.njit(cache=True)
def first_connection(n, us, vs, order, s, t):
    """Position in ``order`` of the edge whose insertion first joins ``s`` and ``t`` (-1 if never)."""
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    if s == t:
        return -1
    for i in range(order.size):
        e = order[i]
        a = _find(parent, us[e])
        b = _find(parent, vs[e])
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
        if _find(parent, s) == _find(parent, t):
            return i
    return -2


@numba.njit(cache=True)
def bfs_component(indptr, indices, start, allowed):
    """Nodes reachable from ``start`` through nodes with ``allowed`` set."""
    n = indptr.size - 1
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    if not allowed[start]:
        return queue[:0]
    seen[start] = True
    queue[tail] = start
    tail += 1
    while head < tail:
        x = queue[head]
        head += 1
        for p in range(indptr[x], indptr[x + 1]):
            y = indices[p]
            if allowed[y] and not seen[y]:
                seen[y] = True
                queue[tail] = y
                tail += 1
    return queue[:tail].copy()


@numba.njit(cache=True)
def bfs_labels(indptr, indices):
    """Components by breadth-first search, labelled by their smallest node (an oracle for union-find)."""
    n = indptr.size - 1
    labels = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        if labels[s] >= 0:
            continue
        labels[s] = s
        head = 0
        tail = 1
        queue[0] = s
        while head < tail:
            x = queue[head]
            head += 1
            for p in range(indptr[x], indptr[x + 1]):
                y = indices[p]
                if labels[y] < 0:
                    labels[y] = s
                    queue[tail] = y
                    tail += 1
    return labels


@numba.njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@numba.njit(cache=True)
def min_edge_expansion(nbr, max_size):
    """Exact ``min #boundary(A) / #A`` over nonempty ``A`` with ``#A <= max_size``.

    ``nbr[v]`` is the neighbour bitmask of vertex v (at most 62 vertices,
    exhaustive over all subsets).  Returns ``(boundary, size, mask)`` of a minimiser.
    """
    n = nbr.size
    best_b = 1
    best_s = 0
    best_m = 0
    for mask in range(1, 1 << n):
        s = _popcount(mask)
        if s > max_size:
            continue
        b = 0
        m = mask
        while m:
            low = m & -m
            v = 0
            t = low
            while t > 1:
                t >>= 1
                v += 1
            b += _popcount(nbr[v] & ~mask)
            m ^= low
        if best_s == 0 or b * best_s < best_b * s:
            best_b = b
            best_s = s
            best_m = mask
    return best_b, best_s, best_m
