"""Packet-level delivery of one demand over a capacity-limited shared link."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..lcu import reverse_waterfill
from .conflict import build_conflict_graph, color_count, gcc_color
from .packets import PacketizedPlacement
from .rates import MulticastRatePlan


@dataclass(frozen=True)
class DeliveryResult:
    """Outcome of delivering one demand.

    Rates are bits/source-sample. ``realized`` is the decodable prefix each
    receiver ends up with from cache plus coded delivery; ``unicast`` is the
    extra rate sent on top of it with the leftover capacity.
    """

    targets: np.ndarray
    coded_transmissions: int
    naive_transmissions: int
    coded_rate: float
    naive_rate: float
    delivered: np.ndarray
    realized: np.ndarray
    unicast: np.ndarray
    reduced_packets: int
    distortion: np.ndarray

    @property
    def unicast_rate(self) -> float:
        return float(self.unicast.sum())

    @property
    def aggregate_load(self) -> float:
        return self.coded_rate + self.unicast_rate

    @property
    def mean_distortion(self) -> float:
        return float(self.distortion.mean())


def demand_hash(d) -> str:
    return hashlib.sha1(",".join(str(int(x)) for x in d).encode()).hexdigest()[:12]


def _naive_packets(d: np.ndarray, targets: np.ndarray) -> int:
    total = 0
    for f in np.unique(d):
        total += int(targets[d == f].max())
    return total


def coded_load(placement: PacketizedPlacement, d, targets=None, refine: bool = False):
    """(coded transmissions, naive transmissions, charged packets) for the given targets."""
    d = np.asarray(d, dtype=np.int64)
    rows = np.arange(placement.n)
    t = placement.range_packets[rows, d] if targets is None else np.asarray(targets, dtype=np.int64)
    graph = build_conflict_graph(placement, d, t)
    coded = color_count(gcc_color(graph, refine=refine)) if len(graph) else 0
    naive = _naive_packets(d, t)
    return coded, naive, min(coded, naive)


def _targets_after(full: np.ndarray, order: np.ndarray, k: int) -> np.ndarray:
    t = full.copy()
    for i in order:
        if k <= 0:
            break
        cut = min(k, int(t[i]))
        t[i] -= cut
        k -= cut
    return t


def simulate_delivery(
    placement: PacketizedPlacement,
    plan: MulticastRatePlan,
    d,
    capacity: float,
    variances,
    refine: bool = False,
) -> DeliveryResult:
    """Coded multicast of the storing ranges, then unicast with what is left.

    The coded load is ``min(colors, naive) * b / B``. When it exceeds the
    capacity, the wanted ranges are cut one packet at a time, starting with
    the receiver whose requested file has the largest variance (ties: lower
    file index, then lower receiver index), until the load fits. Remaining
    capacity is split across receivers by reverse water-filling.
    """
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    d = np.asarray(d, dtype=np.int64)
    n = placement.n
    if d.shape != (n,) or plan.n != n:
        raise ValueError("demand, plan and placement disagree on n")
    sig = np.asarray(variances, dtype=float)[d]
    rows = np.arange(n)
    full = placement.range_packets[rows, d].astype(np.int64)
    unit = placement.packet_rate
    budget = capacity / unit + 1e-9

    coded, naive, charged = coded_load(placement, d, full, refine)
    t, reduced = full, 0
    if charged > budget:
        order = np.lexsort((rows, d, -sig))
        lo, hi = 0, int(full.sum())  # hi always feasible: nothing left to send
        while lo < hi:
            mid = (lo + hi) // 2
            if coded_load(placement, d, _targets_after(full, order, mid), refine)[2] <= budget:
                hi = mid
            else:
                lo = mid + 1
        reduced = lo
        t = _targets_after(full, order, reduced)
        coded, naive, charged = coded_load(placement, d, t, refine)
        while charged > budget:  # refined colorings need not be monotone
            reduced += 1
            t = _targets_after(full, order, reduced)
            coded, naive, charged = coded_load(placement, d, t, refine)

    delivered = np.zeros(n)
    realized = np.zeros(n)
    for i in rows:
        have = placement.cached_mask(i, int(d[i]))
        delivered[i] = (t[i] - have[: t[i]].sum()) * unit
        # decodable prefix: everything below the target, then any cached run
        run = t[i]
        while run < have.size and have[run]:
            run += 1
        realized[i] = run * unit
    coded_rate = charged * unit
    leftover = max(0.0, capacity - coded_rate)
    unicast = reverse_waterfill(np.ones(n), sig, leftover, offsets=realized).allocation if leftover > 0 else np.zeros(n)
    dist = sig * np.exp2(-2.0 * (realized + unicast))
    return DeliveryResult(
        targets=t,
        coded_transmissions=coded,
        naive_transmissions=naive,
        coded_rate=coded_rate,
        naive_rate=naive * unit,
        delivered=delivered,
        realized=realized,
        unicast=unicast,
        reduced_packets=int(reduced),
        distortion=dist,
    )
