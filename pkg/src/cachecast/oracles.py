"""Slow, independent reference computations used by the test suites.

Everything here is brute force and only meant for tiny instances.
"""

from __future__ import annotations

import numpy as np

from .multicast.conflict import ConflictGraph
from .multicast.rates import MulticastRatePlan
from .source_model import DemandModel, enumerate_demands

CHROMATIC_VERTEX_CAP = 16


def chromatic_number(adjacency) -> int:
    """Exact chromatic number by inclusion-exclusion over independent sets.

    A graph is k-colorable iff ``sum_S (-1)^(V-|S|) I(S)^k > 0`` where ``I(S)``
    counts the independent subsets of ``S`` (empty set included).
    """
    A = np.asarray(adjacency, dtype=bool)
    V = A.shape[0]
    if V == 0:
        return 0
    if V > CHROMATIC_VERTEX_CAP:
        raise ValueError(f"at most {CHROMATIC_VERTEX_CAP} vertices")
    nbr = [sum(1 << j for j in range(V) if A[v, j]) for v in range(V)]
    # I(S) = I(S without v) + I(S without v and its neighbours), v = lowest bit
    ind = [0] * (1 << V)
    ind[0] = 1
    for S in range(1, 1 << V):
        v = (S & -S).bit_length() - 1
        rest = S & ~(1 << v)
        ind[S] = ind[rest] + ind[rest & ~nbr[v]]
    sign = [(-1) ** (V - bin(S).count("1")) for S in range(1 << V)]
    for k in range(1, V + 1):
        if sum(s * i**k for s, i in zip(sign, ind)) > 0:
            return k
    return V


def graph_from_edges(V: int, edges) -> np.ndarray:
    A = np.zeros((V, V), dtype=bool)
    for a, b in edges:
        A[a, b] = A[b, a] = True
    return A


def is_proper_coloring(graph: ConflictGraph, colors) -> bool:
    """Pairwise check straight from the definition."""
    colors = list(colors)
    A = graph.adjacency()
    return all(not (A[a, b] and colors[a] == colors[b]) for a in range(len(colors)) for b in range(a + 1, len(colors)))


def waterfill_grid(weights, variances, budget: float, steps: int = 100) -> tuple[float, np.ndarray]:
    """Best ``sum w s 2^(-2x)`` over the grid ``x = budget * k / steps`` with ``sum x = budget``."""
    w = np.asarray(weights, dtype=float) * np.asarray(variances, dtype=float)
    K = w.size
    if K == 1:
        return float(w[0] * np.exp2(-2.0 * budget)), np.array([float(budget)])
    axes = np.meshgrid(*[np.arange(steps + 1)] * (K - 1), indexing="ij")
    head = np.stack([a.ravel() for a in axes], axis=1)
    head = head[head.sum(axis=1) <= steps]
    ks = np.column_stack([head, steps - head.sum(axis=1)])
    x = ks * (budget / steps)
    vals = np.sum(w * np.exp2(-2.0 * x), axis=1)
    k = int(np.argmin(vals))
    return float(vals[k]), x[k]


def enumerated_gcc_rate(plan: MulticastRatePlan, model: DemandModel) -> float:
    """``E_d[min{psi_d, naive_d}]`` by summing over every demand vector."""
    from .multicast.rates import rate_gcc_demand

    D, P = enumerate_demands(model, cap=10**6)
    return float(sum(p * rate_gcc_demand(plan, d) for d, p in zip(D, P)))


def enumerated_psi(plan: MulticastRatePlan, model: DemandModel) -> float:
    """``E_d[psi_d]`` by summing over every demand vector."""
    from .multicast.rates import psi_demand

    D, P = enumerate_demands(model, cap=10**6)
    return float(sum(p * psi_demand(plan, d) for d, p in zip(D, P)))


def positional_gcc_rate(plan: MulticastRatePlan, d) -> float:
    """Large-B load of the constrained coloring, tracking packet positions.

    A receiver never caches a packet beyond its own storing range, so the
    chance that receiver u holds the packet at depth x of file f is
    ``p^c_{u,f}`` for ``x < omega_{u,f}`` and zero past it. Integrating over
    depth gives, per label U, the request count of every receiver in U; the
    constrained coloring needs ``max_i`` of them. Ranges shared by all
    receivers reduce this to the position-free closed form.
    """
    d = np.asarray(d, dtype=int)
    n = plan.n
    pc = plan.cache_probability()
    w = plan.storing_range()
    counts = np.zeros((n, 1 << n))
    for i in range(n):
        f = d[i]
        edges = np.unique(np.concatenate([[0.0], w[:, f][w[:, f] < w[i, f]], [w[i, f]]]))
        for lo, hi in zip(edges[:-1], edges[1:]):
            x = 0.5 * (lo + hi)
            p = np.where(w[:, f] > x, pc[:, f], 0.0)
            v = np.ones(1)
            for u in range(n):
                lo_u, hi_u = (0.0, 1.0 - p[u]) if u == i else (1.0 - p[u], p[u])
                v = np.concatenate([v * lo_u, v * hi_u])
            counts[i] += v * (hi - lo)
    psi = float(counts.max(axis=0).sum())
    naive = sum(w[np.arange(n), d][d == f].max() for f in np.unique(d))
    return min(psi, float(naive))
