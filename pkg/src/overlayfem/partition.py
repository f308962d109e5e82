"""Leaf partitioning for the simulated multi-rank runtime.

Active leaves are the unit of distribution.  Their stable global order is
the depth-first pre-order the mesh already yields, and every partitioner
returns one rank id per leaf in that order.  Three strategies are built:

* contiguous -- equal-count index blocks, the baseline everything else is
  measured against;
* space-filling curve -- leaves sorted along a Hilbert curve, then split
  into consecutive chunks by an optimal weighted bottleneck cut;
* graph -- greedy region growing on the leaf connectivity graph followed
  by boundary-move refinement that trades edge cut against balance.

Leaf weights follow the cost model w = n_GP * N^3 (quadrature points times
the cubed count of active shape functions), normalized by the weight of an
unrefined element at the base order so an ordinary leaf sits near 1.
"""
from __future__ import annotations

import numpy as np

from .quadrature import leaf_point_count


def leaf_index_map(mesh):
    """Stable pre-order index of every active leaf, as {leaf_id: index}."""
    return {leaf.id: i for i, leaf in enumerate(mesh.active_leaf_elements())}


def compute_leaf_weights(basis, domain=None, depth=0, normalized=True):
    """Cost-model weight of each active leaf, pre-order."""
    mesh = basis.mesh
    leaves = mesh.active_leaf_elements()
    w = np.empty(len(leaves))
    for i, leaf in enumerate(leaves):
        n_gp = leaf_point_count(basis, leaf, domain, depth)
        n = basis.leaf_mode_count(leaf)
        w[i] = float(n_gp) * float(n) ** 3
    if normalized:
        d = mesh.dimension
        p0 = basis.orders.base_order
        w0 = float((p0 + 1) ** d) * float((p0 + 1) ** d) ** 3
        w = w / w0
    return w


def weighted_imbalance(weights, ranks, n_ranks):
    """Heaviest rank weight over the ideal share."""
    weights = np.asarray(weights, dtype=float)
    sums = np.bincount(np.asarray(ranks), weights=weights, minlength=n_ranks)
    ideal = weights.sum() / n_ranks
    return float(sums.max() / ideal)


def rank_weight_sums(weights, ranks, n_ranks):
    return np.bincount(np.asarray(ranks), weights=np.asarray(weights, dtype=float),
                       minlength=n_ranks)


def partition_contiguous(n_leaves, n_ranks):
    """Equal-count index blocks: leaf i goes to rank floor(i * P / L)."""
    if n_leaves < 1 or n_ranks < 1:
        raise ValueError("need at least one leaf and one rank")
    idx = np.arange(n_leaves, dtype=np.int64)
    return (idx * n_ranks // n_leaves).astype(np.int64)


# ----------------------------------------------------------------------
# space-filling-curve partitioner

def hilbert_index(order, x, y):
    """Position of cell (x, y) along the Hilbert curve of a 2^order grid."""
    n = 1 << order
    rx = ry = 0
    d = 0
    s = n >> 1
    while s > 0:
        rx = 1 if (x & s) > 0 else 0
        ry = 1 if (y & s) > 0 else 0
        d += s * s * ((3 * rx) ^ ry)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s >>= 1
    return d


def _optimal_interval_cut(weights, n_ranks):
    """Split a weight chain into consecutive chunks minimizing the
    heaviest chunk (classic chains-on-chains bottleneck problem)."""
    w = np.asarray(weights, dtype=float)
    n = w.size

    def fits(bound):
        parts = 1
        acc = 0.0
        for v in w:
            if v > bound:
                return False
            if acc + v > bound:
                parts += 1
                acc = v
                if parts > n_ranks:
                    return False
            else:
                acc += v
        return True

    lo = float(w.max())
    hi = float(w.sum())
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            hi = mid
        else:
            lo = mid
    bound = hi * (1 + 1e-12)
    ranks = np.empty(n, dtype=np.int64)
    r = 0
    acc = 0.0
    for i, v in enumerate(w):
        # keep every trailing rank populated; a forced singleton chunk
        # still respects the bound because no single item exceeds it
        must_break = (n - i) == (n_ranks - r) and acc > 0.0
        if (must_break or (acc + v > bound and acc > 0.0)) and r < n_ranks - 1:
            r += 1
            acc = 0.0
        ranks[i] = r
        acc += v
    return ranks


def partition_sfc(mesh, weights, n_ranks, grid_order=14):
    """Hilbert-ordered bottleneck cut, never worse than the contiguous cut.

    The leaf centers are quantized onto a 2^grid_order lattice over the
    mesh bounding box and sorted along the Hilbert curve; the weight chain
    is then split optimally.  The same optimal cut on plain pre-order is
    kept as a safety net, so the result is at least as balanced as any
    contiguous blocking.
    """
    weights = np.asarray(weights, dtype=float)
    leaves = mesh.active_leaf_elements()
    if len(leaves) != weights.size:
        raise ValueError("one weight per active leaf required")
    centers = np.array([(np.asarray(l.lo_f) + np.asarray(l.hi_f)) / 2 for l in leaves])
    lo = centers.min(axis=0)
    hi = centers.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    n = 1 << grid_order
    cells = np.clip(((centers - lo) / span * (n - 1)).astype(np.int64), 0, n - 1)
    if mesh.dimension == 1:
        keys = cells[:, 0]
    else:
        keys = np.array([hilbert_index(grid_order, int(cx), int(cy))
                         for cx, cy in cells])
    order = np.argsort(keys, kind="stable")

    curve_ranks = _optimal_interval_cut(weights[order], n_ranks)
    sfc = np.empty(weights.size, dtype=np.int64)
    sfc[order] = curve_ranks
    plain = _optimal_interval_cut(weights, n_ranks)

    if (weighted_imbalance(weights, sfc, n_ranks)
            <= weighted_imbalance(weights, plain, n_ranks)):
        return sfc
    return plain


# ----------------------------------------------------------------------
# graph partitioner

def build_leaf_graph(basis):
    """Leaf connectivity with edge weight = number of shared active dofs."""
    mesh = basis.mesh
    leaves = mesh.active_leaf_elements()
    support = {}
    for i, leaf in enumerate(leaves):
        for g in basis.leaf_dofs(leaf):
            support.setdefault(int(g), []).append(i)
    adj = [dict() for _ in range(len(leaves))]
    for holders in support.values():
        if len(holders) < 2:
            continue
        for a in range(len(holders)):
            for b in range(a + 1, len(holders)):
                i, j = holders[a], holders[b]
                adj[i][j] = adj[i].get(j, 0) + 1
                adj[j][i] = adj[j].get(i, 0) + 1
    return adj


def edge_cut(adj, ranks):
    """Total weight of graph edges crossing rank boundaries."""
    ranks = np.asarray(ranks)
    cut = 0
    for i, nbrs in enumerate(adj):
        for j, w in nbrs.items():
            if j > i and ranks[i] != ranks[j]:
                cut += w
    return cut


def _greedy_grow(adj, weights, n_ranks):
    n = len(adj)
    ranks = np.full(n, -1, dtype=np.int64)
    remaining_weight = float(np.sum(weights))
    for r in range(n_ranks):
        if not np.any(ranks < 0):
            break
        remaining_parts = n_ranks - r
        target = remaining_weight / remaining_parts
        if r == n_ranks - 1:
            ranks[ranks < 0] = r
            break
        seed = int(np.flatnonzero(ranks < 0)[0])
        ranks[seed] = r
        part_w = float(weights[seed])
        gain = {}
        for j, w in adj[seed].items():
            if ranks[j] < 0:
                gain[j] = gain.get(j, 0) + w
        while part_w < target:
            if gain:
                best = max(gain.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            else:
                free = np.flatnonzero(ranks < 0)
                if free.size == 0:
                    break
                best = int(free[0])
            ranks[best] = r
            part_w += float(weights[best])
            gain.pop(best, None)
            for j, w in adj[best].items():
                if ranks[j] < 0:
                    gain[j] = gain.get(j, 0) + w
        remaining_weight -= part_w
    return ranks


def _refine_moves(adj, weights, ranks, n_ranks, allowed_max, passes=8):
    """Boundary moves that strictly reduce the edge cut under a weight cap."""
    ranks = np.asarray(ranks).copy()
    sums = rank_weight_sums(weights, ranks, n_ranks)
    for _ in range(passes):
        moved = False
        for i in range(len(adj)):
            if not adj[i]:
                continue
            conn = {}
            for j, w in adj[i].items():
                conn[ranks[j]] = conn.get(ranks[j], 0) + w
            home = int(ranks[i])
            stay = conn.get(home, 0)
            best_rank, best_gain = home, 0
            for r, c in sorted(conn.items()):
                if r == home:
                    continue
                if sums[r] + weights[i] > allowed_max:
                    continue
                gain = c - stay
                if gain > best_gain:
                    best_rank, best_gain = int(r), gain
            if best_rank != home:
                sums[home] -= weights[i]
                sums[best_rank] += weights[i]
                ranks[i] = best_rank
                moved = True
        if not moved:
            break
    return ranks


def partition_graph(adj, weights, n_ranks, balance_slack=1.15):
    """Greedy growing plus cut refinement; falls back to refining the
    contiguous blocking when growing ends up strictly worse."""
    weights = np.asarray(weights, dtype=float)
    n = len(adj)
    ideal = weights.sum() / n_ranks

    grown = _greedy_grow(adj, weights, n_ranks)
    cap = max(balance_slack * ideal,
              float(rank_weight_sums(weights, grown, n_ranks).max()))
    grown = _refine_moves(adj, weights, grown, n_ranks, cap)

    base = partition_contiguous(n, n_ranks)
    cap_b = max(balance_slack * ideal,
                float(rank_weight_sums(weights, base, n_ranks).max()))
    base = _refine_moves(adj, weights, base, n_ranks, cap_b)

    key_g = (edge_cut(adj, grown), weighted_imbalance(weights, grown, n_ranks))
    key_b = (edge_cut(adj, base), weighted_imbalance(weights, base, n_ranks))
    return grown if key_g <= key_b else base


PARTITIONERS = ("contiguous", "sfc", "graph")


def partition_leaves(method, mesh, basis, weights, n_ranks):
    """Dispatch by name; returns one rank per active leaf, pre-order."""
    if method == "contiguous":
        return partition_contiguous(len(weights), n_ranks)
    if method == "sfc":
        return partition_sfc(mesh, weights, n_ranks)
    if method == "graph":
        return partition_graph(build_leaf_graph(basis), weights, n_ranks)
    raise ValueError(f"unknown partitioner {method!r}; pick from {PARTITIONERS}")
