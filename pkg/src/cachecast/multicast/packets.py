"""Layer/packet decomposition of a rate plan and random packet caching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce

import numpy as np

from .rates import MulticastRatePlan

DEFAULT_DENOM_CAP = 64
DEFAULT_MAX_LAYERS = 64


@dataclass(frozen=True)
class PacketizedPlacement:
    """Layered files split into equal packets, with each receiver's cached packets.

    Packet ``k`` of file ``j`` is the same physical packet for every receiver:
    it belongs to layer ``k // packets_per_layer``. Indices are 0-based.
    ``cached_layers`` may be fractional (a partially cached top layer).
    """

    layer_rate: float
    packets_per_layer: int
    cached_layers: np.ndarray
    multicast_layers: np.ndarray
    storing_range: np.ndarray
    range_packets: np.ndarray
    cached_packets: tuple
    fractional: bool = False

    @property
    def n(self) -> int:
        return self.range_packets.shape[0]

    @property
    def m(self) -> int:
        return self.range_packets.shape[1]

    @property
    def packet_rate(self) -> float:
        """Size of one packet in bits/source-sample."""
        return self.layer_rate / self.packets_per_layer

    def cached_mask(self, i: int, j: int, length: int | None = None) -> np.ndarray:
        length = int(self.range_packets[i, j]) if length is None else int(length)
        out = np.zeros(length, dtype=bool)
        idx = self.cached_packets[i][j]
        out[idx[idx < length]] = True
        return out


def _common_layer_rate(values, widest: float, denom_cap: int, max_layers: int):
    vals = [float(v) for v in values if v > 0]
    if not vals:
        return 1.0, False
    fracs = [Fraction(v).limit_denominator(denom_cap) for v in vals]
    if all(f > 0 and abs(float(f) - v) <= 1e-9 * max(1.0, v) for f, v in zip(fracs, vals)):
        L = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fracs))
        g = reduce(math.gcd, (int(f * L) for f in fracs))
        b = g / L
        if max(vals) / b <= max_layers + 1e-9:
            return b, False
    return widest, True


def packetize(
    plan: MulticastRatePlan,
    B: int,
    denom_cap: int = DEFAULT_DENOM_CAP,
    rng: np.random.Generator | None = None,
    layer_rate: float | None = None,
    max_layers: int = DEFAULT_MAX_LAYERS,
) -> PacketizedPlacement:
    """Choose a common layer rate and cache packets uniformly at random.

    The layer rate is the largest ``b`` making every cached and multicast rate
    an integer number of layers, after approximating each rate by a fraction
    with denominator at most ``denom_cap``. When that fails (or would need more
    than ``max_layers`` layers) the placement falls back to fractional layers,
    with ``b`` equal to the widest storing range and ``fractional=True``.

    Receiver ``i`` caches ``round(mu B)`` packets of file ``j`` drawn without
    replacement from the first ``round(omega B)`` packets.
    """
    if int(B) < 1:
        raise ValueError("need at least one packet per layer")
    B = int(B)
    rng = np.random.default_rng() if rng is None else rng
    M, Rt = plan.cached, plan.multicast
    if layer_rate is None:
        b, fractional = _common_layer_rate(
            np.concatenate([M.ravel(), Rt.ravel()]), float((M + Rt).max()), denom_cap, max_layers
        )
    else:
        if layer_rate <= 0:
            raise ValueError("layer rate must be positive")
        b = float(layer_rate)
        lay = np.concatenate([M.ravel(), Rt.ravel()]) / b
        fractional = not np.allclose(lay, np.round(lay), atol=1e-9)
    mu = M / b
    rho = Rt / b
    omega = mu + rho
    range_packets = np.rint(omega * B).astype(np.int64)
    cached_count = np.minimum(np.rint(mu * B).astype(np.int64), range_packets)
    cached = tuple(
        tuple(np.sort(rng.choice(range_packets[i, j], cached_count[i, j], replace=False)) for j in range(plan.m))
        for i in range(plan.n)
    )
    for arr in (mu, rho, omega, range_packets):
        arr.setflags(write=False)
    return PacketizedPlacement(b, B, mu, rho, omega, range_packets, cached, fractional)
