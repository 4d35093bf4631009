"""Independent reference computations used by several test modules."""

from collections import deque

import numpy as np
import scipy.sparse as sp

from inclusion_capacity.potential_theory import FlowField


def bfs_distances(g, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        v = q.popleft()
        for w in range(g.n):
            if g.rates[v, w] > 0 and w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def closure(items, linked):
    """Partition by the transitive closure of a symmetric relation (union-find)."""
    parent = {v: v for v in items}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for u in items:
        for w in items:
            if linked(u, w):
                parent[find(u)] = find(w)
    groups = {}
    for v in items:
        groups.setdefault(find(v), []).append(v)
    return sorted(tuple(sorted(b)) for b in groups.values())


def distance_partitions(g, tol=1e-9):
    """Blocks of the condensing sites under graph distance 1 and under distance at most 2."""
    star = [v for v in range(g.n) if abs(g.measure[v] - 1.0) < tol]
    dist = {v: bfs_distances(g, v) for v in star}
    level2 = closure(star, lambda u, w: dist[u].get(w) == 1)
    level3 = closure(star, lambda u, w: dist[u].get(w, 99) <= 2)
    return level2, level3


def block_gap(g, bi, bj):
    return min(bfs_distances(g, u).get(w, 99) for u in bi for w in bj)


def dense_potential(C, A, B):
    """Oracle: eliminate the boundary from the dense weighted Laplacian."""
    n = C.shape[0]
    Lap = np.diag(C.sum(axis=1)) - C
    h = np.zeros(n)
    h[list(A)] = 1.0
    inner = [v for v in range(n) if v not in A and v not in B]
    if inner:
        h[inner] = np.linalg.solve(Lap[np.ix_(inner, inner)], -Lap[np.ix_(inner, list(A))].sum(axis=1))
    return h, float(h @ Lap @ h)


def dense_trace(chain, W):
    """Oracle: Schur complement of the generator onto W."""
    Q = chain.generator().toarray()
    out = [v for v in range(chain.size) if v not in W]
    QW = Q[np.ix_(W, W)] - Q[np.ix_(W, out)] @ np.linalg.solve(Q[np.ix_(out, out)], Q[np.ix_(out, W)])
    np.fill_diagonal(QW, 0.0)
    return QW


def pick_sets(rng, n):
    perm = rng.permutation(n)
    ka = rng.integers(1, n - 1)
    kb = rng.integers(1, n - ka + 1)
    return sorted(perm[:ka].tolist()), sorted(perm[ka:ka + kb].tolist())


def cycle_flow(chain, rng):
    """Random divergence-free flow: a random circulation around each cycle closed by a non-tree edge."""
    C = sp.triu(chain.conductance, k=1).tocoo()
    edges = list(zip(C.row.tolist(), C.col.tolist()))
    parent = {0: None}
    order = [0]
    adj = {v: [] for v in range(chain.size)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    for u in order:  # breadth-first spanning tree
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                order.append(w)

    def to_root(v):
        out = [v]
        while parent[out[-1]] is not None:
            out.append(parent[out[-1]])
        return out

    rows, cols, vals = [], [], []
    for a, b in edges:
        if parent.get(a) == b or parent.get(b) == a:
            continue
        pa, pb = to_root(a), to_root(b)
        common = next(v for v in pa if v in set(pb))
        loop = pb[:pb.index(common) + 1] + pa[:pa.index(common)][::-1] + [b]  # b -> ... -> a -> b
        k = rng.normal()
        for s_, t_ in zip(loop[:-1], loop[1:]):
            rows.append(s_)
            cols.append(t_)
            vals.append(k)
    return FlowField(chain.size, rows, cols, vals)
