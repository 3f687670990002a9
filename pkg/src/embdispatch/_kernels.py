"""Compiled inner loops for the exact assignment solvers (integer costs)."""

import numpy as np
from numba import njit

INF = np.int64(2**62)


@njit(cache=True, nogil=True)
def hungarian_square(a):
    """Min-cost perfect matching of a square int64 matrix; returns row -> column.

    Shortest augmenting path form of the Hungarian method with row/column
    potentials; one row is added per outer pass, O(k^3) overall.
    """
    k = a.shape[0]
    u = np.zeros(k + 1, dtype=np.int64)
    v = np.zeros(k + 1, dtype=np.int64)
    p = np.zeros(k + 1, dtype=np.int64)
    way = np.zeros(k + 1, dtype=np.int64)
    minv = np.empty(k + 1, dtype=np.int64)
    used = np.empty(k + 1, dtype=np.bool_)
    for i in range(1, k + 1):
        p[0] = i
        j0 = 0
        minv[:] = INF
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            ui0 = u[i0]
            for j in range(1, k + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(k + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.empty(k, dtype=np.int64)
    for j in range(1, k + 1):
        out[p[j] - 1] = j - 1
    return out


@njit(cache=True, nogil=True)
def capacitated_assignment(c, caps):
    """Min-cost assignment of rows to workers with per-worker capacities.

    Equivalent to the Hungarian method on the matrix whose column ``j`` is
    repeated ``caps[j]`` times. Rows are added one at a time; each addition
    follows a shortest path (Bellman-Ford over the ``n`` worker nodes) that
    may shift already-placed rows between workers, ending at a worker with
    spare capacity. ``sum(caps)`` must be at least the row count.
    """
    rows, n = c.shape
    assign = np.full(rows, -1, dtype=np.int64)
    load = np.zeros(n, dtype=np.int64)
    w = np.empty((n, n), dtype=np.int64)
    arg = np.empty((n, n), dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    pred = np.empty(n, dtype=np.int64)
    via = np.empty(n, dtype=np.int64)
    for r in range(rows):
        w[:, :] = INF
        arg[:, :] = -1
        for s in range(r):
            j = assign[s]
            base = c[s, j]
            for jp in range(n):
                if jp != j:
                    d = c[s, jp] - base
                    if d < w[j, jp]:
                        w[j, jp] = d
                        arg[j, jp] = s
        for j in range(n):
            dist[j] = c[r, j]
            pred[j] = -1
            via[j] = -1
        for _ in range(n):
            changed = False
            for j in range(n):
                for jp in range(n):
                    if arg[j, jp] >= 0:
                        nd = dist[j] + w[j, jp]
                        if nd < dist[jp]:
                            dist[jp] = nd
                            pred[jp] = j
                            via[jp] = arg[j, jp]
                            changed = True
            if not changed:
                break
        best = -1
        for j in range(n):
            if load[j] < caps[j] and (best < 0 or dist[j] < dist[best]):
                best = j
        load[best] += 1
        j = best
        while pred[j] >= 0:
            assign[via[j]] = j
            j = pred[j]
        assign[r] = j
    return assign
