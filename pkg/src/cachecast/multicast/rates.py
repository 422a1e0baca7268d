"""Closed-form aggregate coded-multicast rates of random popularity-based
caching with greedy constrained coloring delivery (asymptotic in F).

The general forms sum over all 2^n receiver subsets and are capped at
``n <= 20``. User-symmetric inputs have a binomial form that avoids the
subset enumeration entirely.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from ..source_model import DemandModel, sample_demand

log = logging.getLogger(__name__)

SUBSET_CAP = 20
SUBSET_WARN = 15
DEFAULT_GAMMA_SAMPLES = 10**4
_TABLE_LIMIT = 4_000_000


class EnumerationCapError(ValueError):
    """Raised when a 2^n subset sum is requested beyond the hard cap."""


@dataclass(frozen=True)
class MulticastRatePlan:
    """Per-receiver, per-file cached rates, coded-multicast rates and
    (file-indexed) unicast rates, all in bits/source-sample."""

    cached: np.ndarray
    multicast: np.ndarray
    unicast: np.ndarray = field(default=None)

    def __post_init__(self):
        M = np.atleast_2d(np.array(self.cached, dtype=float))
        Rt = np.atleast_2d(np.array(self.multicast, dtype=float))
        Ru = np.zeros_like(M) if self.unicast is None else np.atleast_2d(np.array(self.unicast, dtype=float))
        if M.shape != Rt.shape or M.shape != Ru.shape:
            raise ValueError("cached, multicast and unicast matrices must share one n x m shape")
        for a in (M, Rt, Ru):
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError("rates must be finite and non-negative")
            a.setflags(write=False)
        object.__setattr__(self, "cached", M)
        object.__setattr__(self, "multicast", Rt)
        object.__setattr__(self, "unicast", Ru)

    @property
    def n(self) -> int:
        return self.cached.shape[0]

    @property
    def m(self) -> int:
        return self.cached.shape[1]

    def storing_range(self) -> np.ndarray:
        """M + R~, the rate guaranteed after coded delivery."""
        return self.cached + self.multicast

    def cache_probability(self) -> np.ndarray:
        """p^c = M / (M + R~), taken as 1 when both vanish."""
        w = self.storing_range()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(w > 0, self.cached / np.where(w > 0, w, 1.0), 1.0)

    def total_rates(self) -> np.ndarray:
        return self.cached + self.multicast + self.unicast

    @classmethod
    def symmetric(cls, cached, multicast, n: int, unicast=None):
        """Replicate per-file vectors across ``n`` receivers."""
        tile = lambda v: None if v is None else np.tile(np.asarray(v, dtype=float), (n, 1))
        return cls(tile(cached), tile(multicast), tile(unicast))

    def is_symmetric(self) -> bool:
        return all(np.allclose(a, a[0], rtol=0, atol=1e-12) for a in (self.cached, self.multicast, self.unicast))


def _check_cap(n: int):
    if n > SUBSET_CAP:
        raise EnumerationCapError(
            f"n = {n} receivers exceeds the 2^n subset cap ({SUBSET_CAP}); "
            "use the user-symmetric form (rate_symmetric) instead"
        )
    if n > SUBSET_WARN:
        warnings.warn(f"enumerating 2^{n} receiver subsets; this is slow", RuntimeWarning, stacklevel=3)


def lambda_prob(i: int, f: int, subset, plan: MulticastRatePlan) -> float:
    """Probability that a packet of file ``f`` wanted by receiver ``i`` is
    cached by exactly the other members of ``subset`` and nobody else."""
    subset = set(int(u) for u in subset)
    if i not in subset:
        raise ValueError(f"receiver {i} is not in the subset {sorted(subset)}")
    pc = plan.cache_probability()[:, f]
    out = 1.0 - pc[i]
    for u in range(plan.n):
        if u == i:
            continue
        out *= pc[u] if u in subset else 1.0 - pc[u]
    return float(out)


def subset_lambda(pc_col: np.ndarray, i: int) -> np.ndarray:
    """lambda(i, f, U) for every subset U given as a bitmask (bit u = receiver u).

    Built as a Kronecker chain of per-receiver factors; entries with
    receiver ``i`` outside ``U`` are zero.
    """
    v = np.ones(1)
    for u, p in enumerate(pc_col):
        if u == i:
            lo, hi = 0.0, 1.0 - p
        else:
            lo, hi = 1.0 - p, p
        v = np.concatenate([v * lo, v * hi])
    return v


def _lambda_table(plan: MulticastRatePlan) -> np.ndarray:
    """Array (m, n, 2^n) of lambda(i, f, U) * (M + R~)[i, f]."""
    pc = plan.cache_probability()
    w = plan.storing_range()
    return np.stack(
        [np.stack([subset_lambda(pc[:, f], i) * w[i, f] for i in range(plan.n)]) for f in range(plan.m)]
    )


def psi_demand(plan: MulticastRatePlan, d) -> float:
    """Coded transmission load of demand ``d`` summed over receiver subsets."""
    d = np.asarray(d, dtype=int)
    _check_cap(plan.n)
    pc = plan.cache_probability()
    w = plan.storing_range()
    best = np.zeros(1 << plan.n)
    for i in range(plan.n):
        np.maximum(best, subset_lambda(pc[:, d[i]], i) * w[i, d[i]], out=best)
    return float(best.sum())


def naive_multicast_rate(plan: MulticastRatePlan, d) -> float:
    """Uncoded multicast: each distinct requested file sent once over the
    widest storing range any receiver has for it.

    The packet simulator only sends what the requesters need, so its naive
    load can be lower when a non-requester has the widest range.
    """
    files = np.unique(np.asarray(d, dtype=int))
    return float(plan.storing_range()[:, files].max(axis=0).sum())


def rate_gcc_demand(plan: MulticastRatePlan, d) -> float:
    """min{psi_d, naive} for one demand realisation."""
    d = np.asarray(d, dtype=int)
    if d.shape != (plan.n,):
        raise ValueError("demand must have one entry per receiver")
    return min(psi_demand(plan, d), naive_multicast_rate(plan, d))


def mbar_average(plan: MulticastRatePlan, model: DemandModel) -> float:
    """Expected naive multicast load under independent requests."""
    return float(np.sum(model.file_request_probability() * plan.storing_range().max(axis=0)))


def gamma_table(plan: MulticastRatePlan, model: DemandModel, samples: int = DEFAULT_GAMMA_SAMPLES, seed=0):
    """Monte Carlo estimate of gamma[U, u, f]: the probability that, over
    the receivers in subset U, receiver u requesting file f attains the
    largest lambda-weighted range. Argmax ties go to the lowest file index,
    then the lowest receiver index."""
    n, m = plan.n, plan.m
    _check_cap(n)
    table = _lambda_table(plan)
    rng = np.random.default_rng(seed)
    counts = np.zeros((1 << n, n, m))
    mem = ((np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    for D in _chunks(sample_demand(model, rng, samples), n):
        vals = table[D, np.arange(n)[None, :], :]  # (S, n, 2^n)
        best = vals.max(axis=1, keepdims=True)
        tie_key = np.where((vals == best) & mem.T[None, :, :], D[:, :, None] * n + np.arange(n)[None, :, None], n * m)
        win = tie_key.argmin(axis=1)  # (S, 2^n)
        f_win = np.take_along_axis(D, win, axis=1)
        U = np.broadcast_to(np.arange(1 << n), win.shape)
        np.add.at(counts, (U.ravel(), win.ravel(), f_win.ravel()), 1.0)
    counts[0] = 0.0
    return counts / samples


def _chunks(D: np.ndarray, n: int):
    step = max(1, _TABLE_LIMIT // max(1, n << n))
    for k in range(0, len(D), step):
        yield D[k : k + step]


def psi_average(plan: MulticastRatePlan, model: DemandModel, gamma_samples=DEFAULT_GAMMA_SAMPLES, seed=0) -> float:
    """Demand-averaged coded load.

    With ``gamma_samples=None`` the expected subset-wise maximum is computed
    exactly from the order statistics of independent requests; otherwise the
    argmax probabilities are estimated from seeded demand draws.
    """
    n = plan.n
    _check_cap(n)
    if model.n != n or model.m != plan.m:
        raise ValueError("plan and demand model dimensions disagree")
    if plan.m * n * (1 << n) > _TABLE_LIMIT * 8:
        raise EnumerationCapError("lambda table too large; use the symmetric form")
    table = _lambda_table(plan)  # (m, n, 2^n)
    if gamma_samples is None:
        return _expected_subset_max(table, model.q)
    rng = np.random.default_rng(seed)
    total = 0.0
    D_all = sample_demand(model, rng, int(gamma_samples))
    for D in _chunks(D_all, n):
        vals = table[D, np.arange(n)[None, :], :]
        total += vals.max(axis=1).sum()
    return float(total / len(D_all))


def _expected_subset_max(table: np.ndarray, q: np.ndarray) -> float:
    """sum over U of E[max_i table[d_i, i, U]] with d_i ~ q[i] independent."""
    m, n, nsub = table.shape
    total = 0.0
    for U in range(1, nsub):
        v = table[:, :, U].T  # (n, m)
        t = np.unique(np.concatenate([[0.0], v.ravel()]))
        # F(t) = prod_i P(V_i <= t)
        le = v[:, :, None] <= t[None, None, :] + 0.0
        F = np.prod(np.einsum("im,imk->ik", q, le), axis=0)
        dF = np.diff(np.concatenate([[0.0], F]))
        total += float(np.dot(t, dF))
    return total


def rate_gcc_average(plan: MulticastRatePlan, model: DemandModel, gamma_samples=DEFAULT_GAMMA_SAMPLES, seed=0) -> float:
    """Average aggregate coded-multicast rate min{psi, mbar}.

    Above the subset cap, user-symmetric inputs are routed to
    :func:`rate_symmetric`; anything else is refused.
    """
    if plan.n > SUBSET_CAP:
        if plan.is_symmetric() and model.is_symmetric():
            return rate_symmetric(
                plan.cached[0], plan.multicast[0], model.q[0], plan.n, gamma_samples=gamma_samples, seed=seed
            )
        _check_cap(plan.n)
    psi = psi_average(plan, model, gamma_samples, seed)
    return min(psi, mbar_average(plan, model))


def _binomial_weights(pc: np.ndarray, n: int) -> np.ndarray:
    """C(n, l) pc^(l-1) (1-pc)^(n-l+1) for l = 1..n, shape (n, m)."""
    ell = np.arange(1, n + 1)[:, None]
    logc = gammaln(n + 1) - gammaln(ell + 1) - gammaln(n - ell + 1)
    with np.errstate(divide="ignore"):
        logw = logc + xlogy(ell - 1, pc[None, :]) + xlogy(n - ell + 1, 1.0 - pc[None, :])
    return np.exp(logw)


def symmetric_gamma(h: np.ndarray, q: np.ndarray, ell: int) -> np.ndarray:
    """P(file j wins argmax of h over ell i.i.d. draws from q), exactly.

    Files are ranked by decreasing h with the lowest index winning ties; j
    wins when every draw falls at or below j's rank and at least one is j.
    """
    order = np.lexsort((np.arange(h.size), -h))
    tail = np.cumsum(q[order][::-1])[::-1]  # mass at or after each rank
    after = np.concatenate([tail[1:], [0.0]])
    g = np.empty_like(q)
    g[order] = np.clip(tail, 0, 1) ** ell - np.clip(after, 0, 1) ** ell
    return g


def rate_symmetric(M_vec, Rt_vec, q_vec, n: int, gamma_samples=None, seed=0) -> float:
    """User-symmetric coded load min{psi(q, p), mbar} in binomial form.

    ``gamma_samples=None`` evaluates the argmax probabilities exactly;
    an integer estimates them from that many seeded i.i.d. draws per subset size.
    """
    M = np.asarray(M_vec, dtype=float)
    Rt = np.asarray(Rt_vec, dtype=float)
    q = np.asarray(q_vec, dtype=float)
    w = M + Rt
    with np.errstate(invalid="ignore", divide="ignore"):
        pc = np.where(w > 0, M / np.where(w > 0, w, 1.0), 1.0)
    coef = _binomial_weights(pc, n)  # (n, m)
    h = coef * w[None, :]
    psi = 0.0
    rng = np.random.default_rng(seed) if gamma_samples is not None else None
    for ell in range(1, n + 1):
        if rng is None:
            g = symmetric_gamma(h[ell - 1], q, ell)
        else:
            g = _symmetric_gamma_mc(h[ell - 1], q, ell, int(gamma_samples), rng)
        psi += float(np.dot(g, h[ell - 1]))
    mbar = float(np.sum((1.0 - (1.0 - q) ** n) * w))
    return min(psi, mbar)


def _symmetric_gamma_mc(h, q, ell, samples, rng):
    files = rng.choice(q.size, size=(samples, ell), p=q / q.sum())
    hv = h[files]
    best = hv.max(axis=1, keepdims=True)
    win = np.where(hv == best, files, q.size).min(axis=1)
    return np.bincount(win, minlength=q.size) / samples


def popular_mass(q_vec, mt: int) -> float:
    """G = total probability of the ``mt`` most popular files."""
    q = np.sort(np.asarray(q_vec, dtype=float))[::-1]
    if not 1 <= mt <= q.size:
        raise ValueError(f"cutoff {mt} outside [1, {q.size}]")
    return float(min(1.0, q[:mt].sum()))


def rate_rlfu(Mt: float, Rt: float, mt: int, q_vec, n: int, variant: str = "consistent") -> float:
    """Coded load of truncated-uniform (random LFU) caching.

    Every receiver caches ``Mt`` of each of the ``mt`` most popular files and
    each requester gets ``Rt`` delivered.

    ``variant="consistent"`` uses the factor R~/M~ in front, which makes
    ``mt = m`` coincide with :func:`rate_uniform` and with the binomial form.
    ``variant="printed"`` uses R~/(M~+R~) instead and is kept for comparison;
    it charges less than R~ for serving every receiver and degenerates to
    zero load as M~ -> 0.
    """
    if Mt < 0 or Rt < 0:
        raise ValueError("rates must be non-negative")
    G = popular_mass(q_vec, mt)
    tail = n * (1.0 - G) * Rt
    if Rt == 0:
        return 0.0
    x = Rt / (Mt + Rt)
    miss = 1.0 - x ** (n * G)
    if variant == "printed":
        return x * miss * (Mt + Rt) + tail
    if variant != "consistent":
        raise ValueError(f"unknown variant {variant!r}")
    if Mt == 0:
        return n * G * Rt + tail
    return (Rt / Mt) * miss * (Mt + Rt) + tail


def rate_uniform(Mt: float, Rt: float, n: int) -> float:
    """Coded load when every receiver caches ``Mt`` of every (uniformly
    popular) file and receives ``Rt`` more; ``Mt = 0`` is the unicast limit
    ``n * Rt``."""
    if Mt < 0 or Rt < 0:
        raise ValueError("rates must be non-negative")
    if Rt == 0:
        return 0.0
    if Mt == 0:
        return float(n * Rt)
    eps = Mt / (Mt + Rt)
    # 1 - x^n with x = 1 - eps, without cancellation for small eps
    log_x = math.log1p(-eps) if eps < 1.0 else -math.inf
    return (Rt / Mt) * -math.expm1(n * log_x) * (Mt + Rt)
