"""Local Caching-aided Unicast (LC-U).

Each receiver fills its cache on its own by reverse water-filling over its
request distribution, assuming nothing further will be sent. Per demand, the
sender then splits the link capacity across receivers by a second reverse
water-filling that accounts for what each receiver already holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .source_model import (
    CachePlan,
    DemandModel,
    Expectation,
    SourceLibrary,
    check_demand,
    expected_distortion,
)

LN2 = np.log(2.0)
KKT_RTOL = 1e-6


@dataclass(frozen=True)
class WaterfillResult:
    allocation: np.ndarray
    water_level: float
    active_set: frozenset

    def marginal_values(self, weights, variances, costs=None, offsets=None) -> np.ndarray:
        """Stationarity value 2 ln2 w s 2^(-2x) / c of every entry."""
        g = _gain(weights, variances, costs, offsets)
        return g * np.exp2(-2.0 * self.allocation)

    def kkt_violation(self, weights, variances, costs=None, offsets=None) -> float:
        """Largest relative KKT violation (stationarity and complementary slackness)."""
        v = self.marginal_values(weights, variances, costs, offsets)
        lam = self.water_level
        active = np.zeros(v.size, dtype=bool)
        active[list(self.active_set)] = True
        worst = 0.0
        if active.any():
            worst = float(np.max(np.abs(v[active] - lam)) / lam)
        if (~active).any():
            worst = max(worst, float(np.max(np.maximum(v[~active] - lam, 0.0)) / lam))
        return worst


def _gain(weights, variances, costs=None, offsets=None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    s = np.asarray(variances, dtype=float)
    if offsets is not None:
        s = s * np.exp2(-2.0 * np.asarray(offsets, dtype=float))
    c = np.ones_like(w) if costs is None else np.asarray(costs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where((w > 0) & (c > 0), 2.0 * LN2 * w * s / np.where(c > 0, c, 1.0), 0.0)
    return np.broadcast_to(g, np.broadcast_shapes(w.shape, s.shape, c.shape))


def waterfill_levels(log_gain: np.ndarray, costs: np.ndarray, budget) -> tuple[np.ndarray, np.ndarray]:
    """Batched reverse water-filling in the log domain.

    Solves ``min sum_k g_k 2^(-2 x_k)`` subject to ``sum_k c_k x_k = B`` and
    ``x >= 0`` for every row independently. ``log_gain`` holds ``log2 g`` with
    ``-inf`` for entries that must stay at zero.

    The level is located by searching the sorted breakpoints ``log2 g_k``:
    the budget needed to push the level down to the (k+1)-th breakpoint is
    monotone in k, so the active-set size is the first k whose requirement
    reaches the budget, and the level then follows in closed form.

    Returns ``(allocation, log2_level)`` with shapes ``(S, K)`` and ``(S,)``.
    """
    lg = np.atleast_2d(np.asarray(log_gain, dtype=float))
    c = np.broadcast_to(np.asarray(costs, dtype=float), lg.shape)
    B = np.broadcast_to(np.asarray(budget, dtype=float), lg.shape[:1])
    S, K = lg.shape
    order = np.argsort(-lg, axis=1, kind="stable")
    lgs = np.take_along_axis(lg, order, axis=1)
    cs = np.take_along_axis(c, order, axis=1)
    finite = np.isfinite(lgs)
    lgz = np.where(finite, lgs, 0.0)
    csz = np.where(finite, cs, 0.0)
    cum_c = np.cumsum(csz, axis=1)
    cum_clg = np.cumsum(csz * lgz, axis=1)
    nxt = np.concatenate([lgs[:, 1:], np.full((S, 1), -np.inf)], axis=1)
    with np.errstate(invalid="ignore"):
        need = 0.5 * (cum_clg - cum_c * nxt)
    need = np.where(finite, need, np.inf)
    need = np.where(np.isfinite(nxt) | ~finite, need, np.inf)
    k = np.argmax(need >= B[:, None], axis=1)
    rows = np.arange(S)
    with np.errstate(divide="ignore", invalid="ignore"):
        level = (cum_clg[rows, k] - 2.0 * B) / cum_c[rows, k]
    none = ~finite[:, 0]
    level = np.where(none, -np.inf, level)
    zero = B <= 0
    level = np.where(zero & ~none, lgs[:, 0], level)
    with np.errstate(invalid="ignore"):
        x = 0.5 * (lg - level[:, None])
    x = np.where(np.isfinite(lg) & (x > 0), x, 0.0)
    return x, level


def reverse_waterfill(weights, variances, budget: float, costs=None, offsets=None) -> WaterfillResult:
    """Minimise ``sum_k w_k s_k 2^(-2 x_k)`` subject to ``sum_k c_k x_k = budget``.

    ``s_k = variances_k * 2^(-2 offsets_k)`` lets the same routine handle
    rates that stack on top of something already held. Entries with zero
    weight are excluded up front and always get zero.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    g = _gain(weights, variances, costs, offsets)
    if not np.any(g > 0):
        raise ValueError("degenerate input: every weight * variance is zero")
    c = np.ones_like(g) if costs is None else np.asarray(costs, dtype=float)
    with np.errstate(divide="ignore"):
        lg = np.where(g > 0, np.log2(np.where(g > 0, g, 1.0)), -np.inf)
    x, level = waterfill_levels(lg[None, :], c[None, :], budget)
    x = x[0]
    active = frozenset(int(k) for k in np.flatnonzero(x > 0))
    return WaterfillResult(x, float(np.exp2(level[0])), active)


def lcu_cache_allocation(lib: SourceLibrary, demand_row, budget: float) -> WaterfillResult:
    """Cache split of one receiver that ignores any future transmission."""
    q = np.asarray(demand_row, dtype=float)
    if q.shape != (lib.m,):
        raise ValueError("demand row must have one entry per file")
    if abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("demand row must sum to 1")
    return reverse_waterfill(q, lib.variances, budget)


def lcu_cache_plan(lib: SourceLibrary, model: DemandModel, budgets) -> CachePlan:
    """Independent per-receiver placements; receiver i only sees row i of Q."""
    b = np.broadcast_to(np.asarray(budgets, dtype=float), (model.n,))
    rates = np.vstack([lcu_cache_allocation(lib, model.q[i], b[i]).allocation for i in range(model.n)])
    return CachePlan(rates, b)


def lcu_transmission_rates(lib: SourceLibrary, cache: CachePlan, d, capacity: float) -> WaterfillResult:
    """Sender-side unicast split of ``capacity`` for demand ``d``."""
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    d = np.asarray(d, dtype=int)
    if d.shape != (cache.n,) or np.any(d < 0) or np.any(d >= cache.m):
        raise ValueError("demand does not match the cache plan")
    held = cache.rates[np.arange(cache.n), d]
    return reverse_waterfill(np.ones(cache.n), lib.variances[d], capacity, offsets=held)


def lcu_batch_rates(lib: SourceLibrary, cache: CachePlan, demands: np.ndarray, capacity: float) -> np.ndarray:
    """Unicast rates for a ``(k, n)`` array of demands at once."""
    demands = np.atleast_2d(demands)
    if capacity <= 0:
        return np.zeros(demands.shape)
    held = cache.rates[np.arange(cache.n)[None, :], demands]
    lg = np.log2(2.0 * LN2 * lib.variances[demands]) - 2.0 * held
    x, _ = waterfill_levels(lg, np.ones_like(lg), capacity)
    return x


def lcu_expected_distortion(
    lib: SourceLibrary, model: DemandModel, budgets, capacity: float, mode="exact"
) -> Expectation:
    cache = lcu_cache_plan(lib, model, budgets)
    return expected_distortion(
        lib, model, cache, mode=mode, batch_rate=lambda D: lcu_batch_rates(lib, cache, D, capacity)
    )


def lcu_cached_only_distortion(lib: SourceLibrary, model: DemandModel, budgets) -> float:
    """Average over receivers of each receiver's own cached-only objective."""
    cache = lcu_cache_plan(lib, model, budgets)
    per_rx = np.sum(model.q * lib.variances * np.exp2(-2.0 * cache.rates), axis=1)
    return float(per_rx.mean())
