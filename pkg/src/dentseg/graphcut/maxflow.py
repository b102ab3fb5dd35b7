"""Max-flow / min-cut on a fixed-topology residual network (Dinic).

The network is stored as paired arcs in CSR order: arc ``a`` and its
residual partner ``rev[a]``. Topology is built once; capacities can be
refilled for each solve, which is what alpha-expansion needs.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _dinic(n, s, t, start, to, rev, cap):
    level = np.empty(n, dtype=np.int64)
    it = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    flow = 0.0
    while True:
        level[:] = -1
        level[s] = 0
        qh = 0
        qt = 1
        queue[0] = s
        while qh < qt:
            u = queue[qh]
            qh += 1
            for a in range(start[u], start[u + 1]):
                v = to[a]
                if cap[a] > 0.0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            break
        for u in range(n):
            it[u] = start[u]
        while True:
            depth = 0
            u = s
            found = False
            while True:
                if u == t:
                    found = True
                    break
                advanced = False
                while it[u] < start[u + 1]:
                    a = it[u]
                    v = to[a]
                    if cap[a] > 0.0 and level[v] == level[u] + 1:
                        path[depth] = a
                        depth += 1
                        u = v
                        advanced = True
                        break
                    it[u] += 1
                if not advanced:
                    if depth == 0:
                        break
                    level[u] = -1  # dead end for the rest of this phase
                    depth -= 1
                    u = to[rev[path[depth]]]
                    it[u] += 1
            if not found:
                break
            f = cap[path[0]]
            for k in range(1, depth):
                if cap[path[k]] < f:
                    f = cap[path[k]]
            for k in range(depth):
                a = path[k]
                cap[a] -= f
                cap[rev[a]] += f
            flow += f
    return flow


@numba.njit(cache=True)
def _source_side(n, s, start, to, cap):
    seen = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    seen[s] = True
    queue[0] = s
    qh = 0
    qt = 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for a in range(start[u], start[u + 1]):
            v = to[a]
            if cap[a] > 0.0 and not seen[v]:
                seen[v] = True
                queue[qt] = v
                qt += 1
    return seen


class FlowNetwork:
    """Directed network with arcs (tail[k] -> head[k]) given up front.

    Each input arc gets a zero-capacity residual partner. Parallel arcs are
    fine. Arc capacities are supplied per solve in input-arc order.
    """

    def __init__(self, n_nodes: int, tail: np.ndarray, head: np.ndarray):
        tail = np.asarray(tail, dtype=np.int64)
        head = np.asarray(head, dtype=np.int64)
        m = tail.size
        self.n = int(n_nodes)
        self.m = m
        # forward arcs 0..m-1, partners m..2m-1 (pre-sort numbering)
        all_tail = np.concatenate([tail, head])
        all_head = np.concatenate([head, tail])
        order = np.argsort(all_tail, kind="stable")
        where = np.empty(2 * m, dtype=np.int64)
        where[order] = np.arange(2 * m)
        partner = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
        self.to = all_head[order]
        self.rev = where[partner[order]]
        self.start = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(self.start, all_tail + 1, 1)
        self.start = np.cumsum(self.start)
        self.fwd = where[:m]  # sorted position of each input arc
        self.cap = np.zeros(2 * m)

    def solve(self, s: int, t: int, capacity: np.ndarray) -> tuple[float, np.ndarray]:
        """Max-flow value and the source side of a minimum cut.

        The source side is the set reachable from ``s`` in the final
        residual network, i.e. the smallest min-cut source set.
        """
        capacity = np.asarray(capacity, dtype=np.float64)
        if capacity.shape != (self.m,):
            raise ValueError(f"expected {self.m} capacities, got {capacity.shape}")
        if (capacity < 0).any() or not np.isfinite(capacity).all():
            raise ValueError("capacities must be finite and non-negative")
        cap = self.cap
        cap[:] = 0.0
        cap[self.fwd] = capacity
        flow = _dinic(self.n, s, t, self.start, self.to, self.rev, cap)
        return float(flow), _source_side(self.n, s, self.start, self.to, cap)


def max_flow(n_nodes: int, s: int, t: int, arcs) -> tuple[float, np.ndarray]:
    """Convenience wrapper: ``arcs`` is an iterable of (u, v, capacity)."""
    arcs = list(arcs)
    if not arcs:
        side = np.zeros(n_nodes, dtype=bool)
        side[s] = True
        return 0.0, side
    tail, head, cap = (np.array(x) for x in zip(*arcs))
    return FlowNetwork(n_nodes, tail, head).solve(s, t, cap.astype(np.float64))
