"""Pure-Python network simplex for dense transportation problems.

Reference implementation of the same algorithm as the compiled core: a
primal network simplex on the complete bipartite graph, spanning-tree basis
seeded by the northwest-corner rule, Dantzig pricing, cost tolerance
eps_scale * max|cost|. Intended as the import-time fallback; the compiled
backend is preferred for large instances.
"""

import numpy as np

from ..errors import NumericError


def _initial_basis(supply, demand, n, m):
    """Northwest-corner basic feasible solution: exactly n+m-1 arcs."""
    arc_src = np.empty(n + m - 1, dtype=np.int64)
    arc_dst = np.empty(n + m - 1, dtype=np.int64)
    arc_flow = np.empty(n + m - 1, dtype=np.float64)
    ra = supply.copy()
    rb = demand.copy()
    i = j = slot = 0
    while True:
        f = min(ra[i], rb[j])
        arc_src[slot] = i
        arc_dst[slot] = j
        arc_flow[slot] = max(f, 0.0)
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
    return arc_src, arc_dst, arc_flow


def _tree_structure(cost, arc_src, arc_dst, n, m):
    """Parents, depths and dual potentials of the current spanning tree."""
    nodes = n + m
    deg = np.zeros(nodes, dtype=np.int64)
    src = arc_src
    dst = arc_dst + n
    np.add.at(deg, src, 1)
    np.add.at(deg, dst, 1)
    start = np.zeros(nodes + 1, dtype=np.int64)
    np.cumsum(deg, out=start[1:])
    adj_arc = np.empty(2 * (nodes - 1), dtype=np.int64)
    adj_other = np.empty(2 * (nodes - 1), dtype=np.int64)
    pos = start[:nodes].copy()
    for slot in range(nodes - 1):
        u, w = src[slot], dst[slot]
        adj_arc[pos[u]] = slot
        adj_other[pos[u]] = w
        pos[u] += 1
        adj_arc[pos[w]] = slot
        adj_other[pos[w]] = u
        pos[w] += 1

    parent = np.full(nodes, -1, dtype=np.int64)
    parent_arc = np.full(nodes, -1, dtype=np.int64)
    depth = np.zeros(nodes, dtype=np.int64)
    pi = np.zeros(nodes, dtype=np.float64)
    visited = np.zeros(nodes, dtype=bool)
    visited[0] = True
    queue = [0]
    seen = 1
    while queue:
        node = queue.pop()
        for p in range(start[node], start[node + 1]):
            other = adj_other[p]
            if not visited[other]:
                visited[other] = True
                slot = adj_arc[p]
                parent[other] = node
                parent_arc[other] = slot
                depth[other] = depth[node] + 1
                pi[other] = cost[arc_src[slot], arc_dst[slot]] - pi[node]
                queue.append(other)
                seen += 1
    if seen != nodes:
        raise NumericError("transport basis lost connectivity")
    return parent, parent_arc, depth, pi


def _collect_path(node, stop_depth, parent, parent_arc, depth, out):
    while depth[node] > stop_depth:
        out.append(parent_arc[node])
        node = parent[node]
    return node


def solve_transport(cost, supply, demand, eps_scale=1e-12, max_pivots=0):
    """Exact min-cost transport between discrete measures.

    Parameters
    ----------
    cost : (n, m) array of arc costs.
    supply, demand : positive weight vectors with equal sums.
    eps_scale : entering-arc tolerance relative to max |cost|.
    max_pivots : pivot budget; 0 means an automatic bound.

    Returns
    -------
    (total_cost, arc_src, arc_dst, arc_flow) where the arrays describe the
    n+m-1 basic arcs of the optimal spanning tree.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    n, m = cost.shape
    nodes = n + m
    eps = eps_scale * max(1.0, float(np.abs(cost).max()))
    if max_pivots <= 0:
        max_pivots = 1000 + 200 * nodes

    arc_src, arc_dst, arc_flow = _initial_basis(supply, demand, n, m)
    parent, parent_arc, depth, pi = _tree_structure(cost, arc_src, arc_dst, n, m)

    for _ in range(max_pivots):
        reduced = cost - pi[:n, None] - pi[None, n:]
        flat = int(reduced.argmin())
        if reduced.flat[flat] >= -eps:
            total = float(np.sum(arc_flow * cost[arc_src, arc_dst]))
            return total, arc_src, arc_dst, np.maximum(arc_flow, 0.0)
        es, ej = divmod(flat, m)
        et = n + ej

        up_src: list[int] = []
        up_dst: list[int] = []
        x, y = es, et
        x = _collect_path(x, depth[y], parent, parent_arc, depth, up_src)
        y = _collect_path(y, depth[x], parent, parent_arc, depth, up_dst)
        while x != y:
            up_src.append(parent_arc[x])
            x = parent[x]
            up_dst.append(parent_arc[y])
            y = parent[y]

        # arcs alternate -delta, +delta along each branch, starting adjacent
        # to an endpoint of the entering arc
        delta = np.inf
        leave = -1
        for branch in (up_src, up_dst):
            for idx, slot in enumerate(branch):
                if idx % 2 == 0 and arc_flow[slot] < delta:
                    delta = arc_flow[slot]
                    leave = slot
        if leave < 0:
            raise NumericError("degenerate transport pivot found no leaving arc")
        for branch in (up_src, up_dst):
            for idx, slot in enumerate(branch):
                arc_flow[slot] += delta if idx % 2 == 1 else -delta
        arc_src[leave] = es
        arc_dst[leave] = ej
        arc_flow[leave] = delta
        parent, parent_arc, depth, pi = _tree_structure(cost, arc_src, arc_dst, n, m)

    raise NumericError(f"network simplex exceeded {max_pivots} pivots")
