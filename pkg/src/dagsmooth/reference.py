"""Unoptimised procedures written directly from their textbook definitions.

These exist only to cross-check the production code in
:mod:`dagsmooth.selection`; they favour clarity over speed and share no
helpers with it.
"""

from __future__ import annotations

import math


def parents(dag, v):
    return [u for (u, w) in dag.edges if w == v]


def children(dag, v):
    return [w for (u, w) in dag.edges if u == v]


def water_fill(dag, rejected):
    """Push leaf mass upward until every unit sits on a node whose parents
    are all rejected."""
    n = dag.node_count
    rejected = set(rejected)
    leaves = [v for v in range(n) if not children(dag, v)]
    z = len([v for v in leaves if v not in rejected])
    g = [0.0] * n
    for v in leaves:
        if v not in rejected:
            g[v] = 1.0 / z
    while True:
        movable = [
            v for v in range(n) if g[v] > 0 and [u for u in parents(dag, v) if u not in rejected]
        ]
        if not movable:
            break
        v = movable[0]
        live = [u for u in parents(dag, v) if u not in rejected]
        for u in live:
            g[u] += g[v] / len(live)
        g[v] = 0.0
    return g


def meijer_goeman(dag, p, alpha):
    """Returns the rejection set and the list of rejection states visited."""
    rejected = set()
    states = [frozenset()]
    while True:
        pi = water_fill(dag, rejected)
        new = {
            v
            for v in range(dag.node_count)
            if v not in rejected
            and all(u in rejected for u in parents(dag, v))
            and p[v] <= alpha * pi[v]
        }
        if not new:
            return rejected, states
        rejected |= new
        states.append(frozenset(rejected))


def topological_sort_subgraph(dag, nodes):
    """Repeatedly take the smallest node none of whose in-subgraph parents remain."""
    remaining = set(nodes)
    order = []
    while remaining:
        ready = [v for v in sorted(remaining) if not any(u in remaining for u in parents(dag, v))]
        v = ready[0]
        order.append(v)
        remaining.remove(v)
    return order


def hybrid_fdx(dag, p, gamma, alpha):
    s0, _ = meijer_goeman(dag, p, alpha)
    size = math.floor(len(s0) * gamma / (1 - gamma) + 1e-9)
    rest = [v for v in range(dag.node_count) if v not in s0]
    return set(s0) | set(topological_sort_subgraph(dag, rest)[:size])


def effective_counts(dag):
    """Effective leaves and nodes via memoised recursion from each node."""
    memo = {}

    def rec(v):
        if v not in memo:
            kids = children(dag, v)
            if not kids:
                memo[v] = (1.0, 1.0)
            else:
                ell = 0.0
                m = 1.0
                for w in kids:
                    lw, mw = rec(w)
                    k = len(parents(dag, w))
                    ell += lw / k
                    m += mw / k
                memo[v] = (ell, m)
        return memo[v]

    counts = [rec(v) for v in range(dag.node_count)]
    return [c[0] for c in counts], [c[1] for c in counts]


def longest_path_depth(dag):
    memo = {}

    def rec(v):
        if v not in memo:
            ps = parents(dag, v)
            memo[v] = 1 if not ps else 1 + max(rec(u) for u in ps)
        return memo[v]

    return [rec(v) for v in range(dag.node_count)]


def dagger(dag, p, alpha):
    ell, m = effective_counts(dag)
    big_l = len([v for v in range(dag.node_count) if not children(dag, v)])
    depth = longest_path_depth(dag)
    rejected = set()
    prior = 0
    for d in range(1, max(depth, default=0) + 1):
        layer = [
            v
            for v in range(dag.node_count)
            if depth[v] == d and all(u in rejected for u in parents(dag, v))
        ]

        def level(v, r):
            return alpha * (ell[v] / big_l) * (m[v] + r + prior - 1) / m[v]

        big_r = 0
        for r in range(len(layer), 0, -1):
            if sum(1 for v in layer if p[v] <= level(v, r)) >= r:
                big_r = r
                break
        if big_r:
            rejected |= {v for v in layer if p[v] <= level(v, big_r)}
        prior += big_r
    return rejected


def benjamini_hochberg(p, alpha):
    n = len(p)
    ranked = sorted(range(n), key=lambda v: (p[v], v))
    k = 0
    for i in range(n, 0, -1):
        if p[ranked[i - 1]] <= alpha * i / n:
            k = i
            break
    return set(ranked[:k])
