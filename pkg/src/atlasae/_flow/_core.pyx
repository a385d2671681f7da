# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled network simplex for dense transportation problems.

Same algorithm as atlasae._flow._pure (northwest-corner start, spanning-tree
basis, leaving arc = first minimum on the cycle) but with typed loops and
block-search pricing, which makes instances with a few thousand support
points per side tractable.
"""

import numpy as np

cimport numpy as cnp

from ..errors import NumericError

cnp.import_array()


def solve_transport(cost, supply, demand, double eps_scale=1e-12, long max_pivots=0):
    """Exact min-cost transport; see the pure backend for the contract."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] C = \
        np.ascontiguousarray(cost, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = \
        np.ascontiguousarray(supply, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = \
        np.ascontiguousarray(demand, dtype=np.float64)
    cdef long n = C.shape[0]
    cdef long m = C.shape[1]
    cdef long nodes = n + m
    cdef long n_arcs = n * m
    cdef double eps = eps_scale
    cdef double cmax = 0.0
    cdef long i, j, slot, node, other, p, es, ej, et, x, y, idx
    cdef double f, delta, rc, best_rc, total

    for i in range(n):
        for j in range(m):
            if C[i, j] > cmax:
                cmax = C[i, j]
            elif -C[i, j] > cmax:
                cmax = -C[i, j]
    if cmax > 1.0:
        eps = eps_scale * cmax
    if max_pivots <= 0:
        max_pivots = 1000 + 200 * nodes

    cdef cnp.ndarray[cnp.int64_t, ndim=1] arc_src = np.empty(nodes - 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] arc_dst = np.empty(nodes - 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arc_flow = np.empty(nodes - 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ra = a.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rb = b.copy()

    # northwest-corner initial basis
    i = 0
    j = 0
    slot = 0
    while True:
        f = ra[i] if ra[i] < rb[j] else rb[j]
        arc_src[slot] = i
        arc_dst[slot] = j
        arc_flow[slot] = f if f > 0.0 else 0.0
        ra[i] -= f
        rb[j] -= f
        slot += 1
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1

    # tree arrays, rebuilt after every pivot
    cdef cnp.ndarray[cnp.int64_t, ndim=1] deg = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] start = np.empty(nodes + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pos = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] adj_arc = np.empty(2 * (nodes - 1), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] adj_other = np.empty(2 * (nodes - 1), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] parent = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] parent_arc = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] depth = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pi = np.empty(nodes, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] visited = np.empty(nodes, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cyc_arc = np.empty(nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cyc_sign = np.empty(nodes, dtype=np.int64)

    cdef long block = <long> (np.sqrt(n_arcs) + 1.0)
    if block < 64:
        block = 64
    cdef long cursor = 0
    cdef long scanned, arc, top, seen, n_cyc, leave, pivot
    cdef long u, w

    for pivot in range(max_pivots + 1):
        # --- rebuild adjacency and tree labels ---
        for node in range(nodes):
            deg[node] = 0
            visited[node] = 0
        for slot in range(nodes - 1):
            deg[arc_src[slot]] += 1
            deg[arc_dst[slot] + n] += 1
        start[0] = 0
        for node in range(nodes):
            start[node + 1] = start[node] + deg[node]
            pos[node] = start[node]
        for slot in range(nodes - 1):
            u = arc_src[slot]
            w = arc_dst[slot] + n
            adj_arc[pos[u]] = slot
            adj_other[pos[u]] = w
            pos[u] += 1
            adj_arc[pos[w]] = slot
            adj_other[pos[w]] = u
            pos[w] += 1
        parent[0] = -1
        parent_arc[0] = -1
        depth[0] = 0
        pi[0] = 0.0
        visited[0] = 1
        stack[0] = 0
        top = 1
        seen = 1
        while top > 0:
            top -= 1
            node = stack[top]
            for p in range(start[node], start[node + 1]):
                other = adj_other[p]
                if visited[other] == 0:
                    visited[other] = 1
                    slot = adj_arc[p]
                    parent[other] = node
                    parent_arc[other] = slot
                    depth[other] = depth[node] + 1
                    pi[other] = C[arc_src[slot], arc_dst[slot]] - pi[node]
                    stack[top] = other
                    top += 1
                    seen += 1
        if seen != nodes:
            raise NumericError("transport basis lost connectivity")

        # --- block-search pricing ---
        es = -1
        ej = -1
        best_rc = -eps
        scanned = 0
        while scanned < n_arcs:
            arc = cursor
            i = arc // m
            j = arc - i * m
            rc = C[i, j] - pi[i] - pi[n + j]
            if rc < best_rc:
                best_rc = rc
                es = i
                ej = j
            cursor += 1
            if cursor == n_arcs:
                cursor = 0
            scanned += 1
            if es >= 0 and scanned % block == 0:
                break
        if es < 0:
            total = 0.0
            for slot in range(nodes - 1):
                if arc_flow[slot] < 0.0:
                    arc_flow[slot] = 0.0
                total += arc_flow[slot] * C[arc_src[slot], arc_dst[slot]]
            return total, np.asarray(arc_src), np.asarray(arc_dst), np.asarray(arc_flow)

        # --- pivot: cycle between es and the sink node of the entering arc ---
        # an arc met after an even number of hops from its branch endpoint
        # loses delta, after an odd number it gains delta
        et = n + ej
        n_cyc = 0
        x = es
        y = et
        while depth[x] > depth[y]:
            cyc_arc[n_cyc] = parent_arc[x]
            cyc_sign[n_cyc] = -1 if (depth[es] - depth[x]) % 2 == 0 else 1
            n_cyc += 1
            x = parent[x]
        while depth[y] > depth[x]:
            cyc_arc[n_cyc] = parent_arc[y]
            cyc_sign[n_cyc] = -1 if (depth[et] - depth[y]) % 2 == 0 else 1
            n_cyc += 1
            y = parent[y]
        while x != y:
            cyc_arc[n_cyc] = parent_arc[x]
            cyc_sign[n_cyc] = -1 if (depth[es] - depth[x]) % 2 == 0 else 1
            n_cyc += 1
            x = parent[x]
            cyc_arc[n_cyc] = parent_arc[y]
            cyc_sign[n_cyc] = -1 if (depth[et] - depth[y]) % 2 == 0 else 1
            n_cyc += 1
            y = parent[y]

        delta = -1.0
        leave = -1
        for idx in range(n_cyc):
            if cyc_sign[idx] < 0:
                slot = cyc_arc[idx]
                if delta < 0.0 or arc_flow[slot] < delta:
                    delta = arc_flow[slot]
                    leave = slot
        if leave < 0:
            raise NumericError("degenerate transport pivot found no leaving arc")
        for idx in range(n_cyc):
            slot = cyc_arc[idx]
            if cyc_sign[idx] < 0:
                arc_flow[slot] -= delta
            else:
                arc_flow[slot] += delta
        arc_src[leave] = es
        arc_dst[leave] = ej
        arc_flow[leave] = delta

    raise NumericError(f"network simplex exceeded {max_pivots} pivots")
