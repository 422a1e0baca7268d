"""Index-coding conflict graphs and greedy constrained coloring.

A vertex is a (receiver, file, packet) request that the receiver does not
hold. Two requests can share one XOR-coded transmission when each receiver
already caches the other's packet, or when they ask for the very same packet.
Every color class is one transmission of size ``b / B`` bits/source-sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from .packets import PacketizedPlacement

REFINE_LIMIT = 2000


@dataclass(frozen=True)
class ConflictGraph:
    """Vertices as parallel arrays; adjacency is derived on demand.

    ``cached_by[v]`` is a bitmask of the receivers that cache vertex v's packet.
    Vertices are ordered by (receiver, file, packet).
    """

    receiver: np.ndarray
    file: np.ndarray
    packet: np.ndarray
    cached_by: np.ndarray
    n: int

    def __len__(self) -> int:
        return int(self.receiver.size)

    @property
    def vertices(self) -> list:
        return list(zip(self.receiver.tolist(), self.file.tolist(), self.packet.tolist()))

    def labels(self) -> np.ndarray:
        """Receiver-set label: the requester plus everyone caching the packet."""
        return self.cached_by | (np.int64(1) << self.receiver)

    def conflicts(self, a=None, b=None) -> np.ndarray:
        """Boolean conflict matrix between vertex index sets ``a`` and ``b``."""
        a = np.arange(len(self)) if a is None else np.asarray(a)
        b = np.arange(len(self)) if b is None else np.asarray(b)
        ra, rb = self.receiver[a][:, None], self.receiver[b][None, :]
        same_packet = (self.file[a][:, None] == self.file[b][None, :]) & (
            self.packet[a][:, None] == self.packet[b][None, :]
        )
        a_has_b = (self.cached_by[b][None, :] >> ra) & 1
        b_has_a = (self.cached_by[a][:, None] >> rb) & 1
        out = (ra == rb) | ~((a_has_b & b_has_a).astype(bool))
        out &= ~same_packet
        out &= a[:, None] != b[None, :]
        return out

    def adjacency(self) -> np.ndarray:
        return self.conflicts()

    def edges(self) -> list[tuple[int, int]]:
        A = self.adjacency()
        i, j = np.nonzero(np.triu(A, 1))
        return list(zip(i.tolist(), j.tolist()))

    def is_proper(self, colors) -> bool:
        colors = np.asarray(colors)
        if len(self) == 0:
            return True
        order = np.argsort(colors, kind="stable")
        cs = colors[order]
        bounds = np.flatnonzero(np.diff(cs)) + 1
        for grp in np.split(order, bounds):
            if grp.size > 1 and self.conflicts(grp, grp).any():
                return False
        return True


def build_conflict_graph(placement: PacketizedPlacement, d, targets=None) -> ConflictGraph:
    """Conflict graph of the packets each receiver still needs for demand ``d``.

    ``targets[i]`` caps receiver i's wanted range (in packets); by default it
    is the full storing range of its requested file.
    """
    d = np.asarray(d, dtype=np.int64)
    n = placement.n
    if n > 62:
        raise ValueError("bitmask labels support at most 62 receivers")
    rows = np.arange(n)
    full = placement.range_packets[rows, d]
    t = full if targets is None else np.minimum(np.asarray(targets, dtype=np.int64), full)
    masks = {}
    for f in np.unique(d):
        length = int(placement.range_packets[:, f].max())
        mk = np.zeros(length, dtype=np.int64)
        for u in range(n):
            idx = placement.cached_packets[u][f]
            mk[idx] |= np.int64(1) << u
        masks[int(f)] = mk
    R, F, P, C = [], [], [], []
    for i in range(n):
        f = int(d[i])
        want = np.arange(int(t[i]))
        mk = masks[f][: int(t[i])]
        need = want[((mk >> i) & 1) == 0]
        R.append(np.full(need.size, i, dtype=np.int64))
        F.append(np.full(need.size, f, dtype=np.int64))
        P.append(need)
        C.append(mk[need])
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
    return ConflictGraph(cat(R), cat(F), cat(P).astype(np.int64), cat(C), n)


def _constrained_classes(graph: ConflictGraph) -> np.ndarray:
    """Color = (label, k-th request of each receiver within that label)."""
    V = len(graph)
    if V == 0:
        return np.zeros(0, dtype=np.int64)
    lab = graph.labels()
    key = lab * 64 + graph.receiver
    order = np.lexsort((np.arange(V), key))
    ks = key[order]
    start = np.concatenate([[0], np.flatnonzero(np.diff(ks)) + 1])
    run = np.repeat(start, np.diff(np.concatenate([start, [V]])))
    rank = np.empty(V, dtype=np.int64)
    rank[order] = np.arange(V) - run
    pair = np.stack([lab, rank], axis=1)
    _, colors = np.unique(pair, axis=0, return_inverse=True)
    return colors.ravel().astype(np.int64)


def _merge_largest_first(graph: ConflictGraph, colors: np.ndarray) -> np.ndarray:
    k = int(colors.max()) + 1
    members = [np.flatnonzero(colors == c) for c in range(k)]
    order = sorted(range(k), key=lambda c: (-members[c].size, c))
    merged: list[np.ndarray] = []
    for c in order:
        for slot, grp in enumerate(merged):
            if not graph.conflicts(members[c], grp).any():
                merged[slot] = np.concatenate([grp, members[c]])
                break
        else:
            merged.append(members[c])
    out = np.empty_like(colors)
    for slot, grp in enumerate(merged):
        out[grp] = slot
    return out


def _dsatur(graph: ConflictGraph) -> np.ndarray:
    G = nx.Graph()
    G.add_nodes_from(range(len(graph)))
    G.add_edges_from(graph.edges())
    col = nx.coloring.greedy_color(G, strategy="saturation_largest_first")
    return np.array([col[v] for v in range(len(graph))], dtype=np.int64)


def gcc_color(graph: ConflictGraph, refine: bool = True, refine_limit: int = REFINE_LIMIT) -> np.ndarray:
    """Greedy constrained coloring; returns one color id per vertex.

    The constrained pass groups requests whose receiver-set labels coincide:
    within a label, the k-th request of every receiver forms one coded
    transmission. Its transmission count is what the asymptotic rate formula
    describes. With ``refine`` (and at most ``refine_limit`` vertices) the
    classes are further merged largest-first where no conflict arises, and a
    saturation-ordered greedy coloring of the raw graph is tried as well; the
    coloring with fewer colors wins, ties going to the merged one.
    """
    colors = _constrained_classes(graph)
    if not refine or len(graph) == 0 or len(graph) > refine_limit:
        return colors
    merged = _merge_largest_first(graph, colors)
    alt = _dsatur(graph)
    return alt if alt.max() < merged.max() else merged


def color_count(colors) -> int:
    colors = np.asarray(colors)
    return int(np.unique(colors).size)
