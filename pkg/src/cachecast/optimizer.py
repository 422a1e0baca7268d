"""Rate design for caching-aided coded multicast (CC-CM).

Every program here has the same shape: choose cached rates M, coded
multicast rates R~ and unicast rates R^ to minimise expected distortion,
subject to the per-receiver cache budgets and a shared-link load constraint.

The solvers treat unicast as an inner problem. For a fixed (M, R~) the coded
load is known in closed form, and the best unicast split of what is left of
the link is a reverse water-filling. Only (M, R~) are searched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .lcu import LN2, lcu_cache_plan, waterfill_levels
from .multicast.rates import (
    MulticastRatePlan,
    popular_mass,
    rate_gcc_average,
    rate_gcc_demand,
    rate_rlfu,
    rate_symmetric,
    rate_uniform,
)
from .source_model import (
    DemandModel,
    SourceLibrary,
    as_demand_model,
    enumerate_demands,
    expected_distortion_separable,
)

UNICAST_MODES = ("per-file", "per-demand")
STEP_RULES = ("armijo", "fixed")
PER_DEMAND_CAP = 10**5
MAX_CUTOFFS = 50


@dataclass(frozen=True)
class OptimizerConfig:
    """Solver settings.

    ``step_rule`` is ``"armijo"`` (backtracking from an adaptive step) or
    ``"fixed"`` (backtracking from ``initial_step`` every time).
    ``rlfu_cutoff_scan`` lists the cutoffs to try; ``None`` means
    ``ceil(M) .. m`` thinned to at most 50 values.
    ``unicast_mode="per-file"`` enforces the link load on average over
    demands; ``"per-demand"`` enforces it for every demand with positive
    probability and water-fills the leftover per demand.
    ``polish_evaluations`` caps the pattern-search polish run after each
    descent (0 disables it). Random starts are the best ``restarts`` of
    ``screen_pool`` random draws.
    """

    restarts: int = 8
    max_iterations: int = 60
    step_rule: str = "armijo"
    tolerance: float = 1e-6
    seed: int = 0
    rlfu_cutoff_scan: tuple | None = None
    unicast_mode: str = "per-file"
    initial_step: float = 0.5
    grid_points: int = 41
    polish_evaluations: int = 300
    screen_pool: int = 64

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.unicast_mode not in UNICAST_MODES:
            raise ValueError(f"unicast_mode must be one of {UNICAST_MODES}")
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")
        if self.screen_pool < 0:
            raise ValueError("screen_pool must be non-negative")
        if self.polish_evaluations < 0:
            raise ValueError("polish_evaluations must be non-negative")


@dataclass(frozen=True)
class CcCmSolution:
    """A designed rate plan and how it was obtained.

    ``plan.unicast`` holds the per-file unicast rates; in per-demand mode it is
    all zeros because the unicast split is recomputed for each demand.
    ``constraint_slack`` is capacity minus the constrained link load.
    """

    plan: MulticastRatePlan
    objective: float
    constraint_slack: float
    solver_trace: list
    feasible: bool
    scheme: str
    m_tilde: int | None = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------- helpers


def project_capped_simplex(x, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{y >= 0, sum y <= cap}``."""
    x = np.asarray(x, dtype=float)
    y = np.maximum(x, 0.0)
    if y.sum() <= cap:
        return y
    if cap <= 0:
        return np.zeros_like(y)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - cap
    active = np.flatnonzero(u - css / np.arange(1, u.size + 1) > 0)
    k = active[-1] if active.size else 0  # a tiny cap can cancel to zero
    return np.maximum(x - css[k] / (k + 1), 0.0)


def unicast_fill(weights, residual_var, costs, budget: float) -> np.ndarray:
    """Unicast rates minimising ``sum w s 2^(-2x)`` under ``sum c x <= budget``.

    Works on arrays of any shape; entries with zero weight or cost get zero.
    """
    w = np.asarray(weights, dtype=float)
    s = np.asarray(residual_var, dtype=float)
    c = np.asarray(costs, dtype=float)
    shape = np.broadcast_shapes(w.shape, s.shape, c.shape)
    out = np.zeros(shape)
    if budget <= 0:
        return out
    w, s, c = (np.broadcast_to(a, shape).ravel() for a in (w, s, c))
    ok = (w > 0) & (s > 0) & (c > 0)
    if not ok.any():
        return out
    lg = np.full(w.size, -np.inf)
    lg[ok] = np.log2(2.0 * LN2 * w[ok] * s[ok] / c[ok])
    cc = np.where(ok, c, 1.0)
    x, _ = waterfill_levels(lg[None, :], cc[None, :], budget)
    return x[0].reshape(shape)


def _cutoffs(M: float, m: int, scan) -> list[int]:
    if scan is not None:
        cand = sorted({int(v) for v in scan})
        if not cand:
            raise ValueError("empty cutoff scan")
        if cand[0] < 1 or cand[-1] > m:
            raise ValueError(f"cutoffs must lie in [1, {m}]")
        return cand
    lo = min(m, max(1, math.ceil(M - 1e-12)))
    return sorted({int(round(v)) for v in np.linspace(lo, m, min(MAX_CUTOFFS, m - lo + 1))})


def _better(a: tuple, b: tuple | None) -> bool:
    """Lower objective wins; exact ties go to the lexicographically smaller vector."""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] < b[0]
    return tuple(np.ravel(a[1])) < tuple(np.ravel(b[1]))


# ------------------------------------------------ descent over (M, R~)


class _Problem:
    """Evaluation of one (M, R~) design for a fixed instance.

    Subclasses define ``coded_load``, ``objective_and_unicast`` and the
    shape of the variables; the descent routine lives here.
    """

    capacity: float
    budgets: np.ndarray
    shape: tuple

    def split(self, z):
        k = int(np.prod(self.shape))
        return z[:k].reshape(self.shape), z[k:].reshape(self.shape)

    def project(self, z):
        M, Rt = self.split(np.asarray(z, dtype=float))
        M = np.atleast_2d(M)
        Mp = np.vstack([project_capped_simplex(M[i], self.budgets[i]) for i in range(M.shape[0])])
        return np.concatenate([Mp.reshape(self.shape).ravel(), np.maximum(Rt, 0.0).ravel()])

    def feasible(self, M, Rt) -> bool:
        return self.coded_load(M, Rt) <= self.capacity + 1e-12

    def repair(self, z):
        """Project, then shrink R~ along the ray towards zero until feasible."""
        z = self.project(z)
        M, Rt = self.split(z)
        if self.feasible(M, Rt):
            return z
        # the load vanishes at R~ = 0, so a sign change is guaranteed on [0, 1]
        t = brentq(lambda s: self.coded_load(M, s * Rt) - self.capacity, 0.0, 1.0, xtol=1e-12)
        while t > 0 and not self.feasible(M, t * Rt):
            t = max(0.0, t - 1e-12 - 1e-9 * t)
        return np.concatenate([M.ravel(), (t * Rt).ravel()])

    def value(self, z) -> float:
        M, Rt = self.split(z)
        return self.objective_and_unicast(M, Rt)[0]

    def descend(self, z0, cfg: OptimizerConfig, restart: int, trace: list):
        z = self.repair(z0)
        f = self.value(z)
        trace.append({"restart": restart, "iteration": 0, "objective": f, "step": 0.0})
        step = cfg.initial_step
        for it in range(1, cfg.max_iterations + 1):
            h = 1e-5 * np.maximum(1.0, np.abs(z))
            g = np.empty_like(z)
            for k in range(z.size):
                e = np.zeros_like(z)
                e[k] = h[k]
                g[k] = (self.value(self.repair(z + e)) - self.value(self.repair(z - e))) / (2 * h[k])
            gg = float(g @ g)
            if gg == 0.0 or not np.isfinite(gg):
                break
            if cfg.step_rule == "fixed":
                step = cfg.initial_step
            accepted = False
            while step > 1e-10:
                zn = self.repair(z - step * g)
                fn = self.value(zn)
                # sufficient decrease along the projected displacement
                if fn < f and f - fn >= 1e-4 * float(g @ (z - zn)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            gain = f - fn
            z, f = zn, fn
            trace.append({"restart": restart, "iteration": it, "objective": f, "step": step})
            step *= 2.0
            if gain <= cfg.tolerance * max(abs(f), 1e-12):
                break
        if cfg.polish_evaluations:
            z, f = self.pattern_search(z, f, cfg, restart, trace)
        return z, f

    def pattern_search(self, z, f, cfg: OptimizerConfig, restart: int, trace: list):
        """Derivative-free polish for the kinks of the min/max load.

        Tries single-coordinate moves and cache-for-multicast trades that keep
        each storing range fixed; accepts only improvements and halves the
        step when none helps.
        """
        k = z.size // 2
        dirs = []
        for j in range(z.size):
            e = np.zeros(z.size)
            e[j] = 1.0
            dirs += [e, -e]
        for j in range(k):
            e = np.zeros(z.size)
            e[j], e[k + j] = 1.0, -1.0
            dirs += [e, -e]
        step = max(float(np.max(self.budgets)), self.capacity, 1e-3) / 4.0
        evals = 0
        it = len(trace)
        while step > 1e-7 and evals < cfg.polish_evaluations:
            moved = False
            for e in dirs:
                zn = self.repair(z + step * e)
                fn = self.value(zn)
                evals += 1
                if fn < f - 1e-15:
                    z, f, moved = zn, fn, True
                    it += 1
                    trace.append({"restart": restart, "iteration": it, "objective": f, "step": step})
                    break
            if not moved:
                step *= 0.5
        return z, f


class _GeneralProblem(_Problem):
    def __init__(self, lib: SourceLibrary, model: DemandModel, budgets, capacity: float, mode: str):
        self.lib, self.model, self.capacity, self.mode = lib, model, float(capacity), mode
        self.shape = (model.n, model.m)
        self.budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (model.n,)).copy()
        if mode == "per-demand":
            if model.m**model.n > PER_DEMAND_CAP:
                raise ValueError("per-demand mode enumerates every demand; instance too large")
            D, P = enumerate_demands(model)
            keep = P > 0
            self.D, self.P = D[keep], P[keep]

    def plan(self, M, Rt, unicast=None):
        return MulticastRatePlan(M, Rt, unicast)

    def coded_load(self, M, Rt) -> float:
        plan = self.plan(M, Rt)
        if self.mode == "per-demand":
            return max(rate_gcc_demand(plan, d) for d in self.D)
        return rate_gcc_average(plan, self.model, gamma_samples=None)

    def objective_and_unicast(self, M, Rt):
        lib, q, n = self.lib, self.model.q, self.model.n
        omega = M + Rt
        if self.mode == "per-demand":
            plan = self.plan(M, Rt)
            rows = np.arange(n)
            total = 0.0
            for d, p in zip(self.D, self.P):
                left = self.capacity - rate_gcc_demand(plan, d)
                if left < -1e-12:
                    return math.inf, None
                base = omega[rows, d]
                s = lib.variances[d] * np.exp2(-2.0 * base)
                x = unicast_fill(np.ones(n), s, np.ones(n), max(left, 0.0))
                total += p * float(np.mean(s * np.exp2(-2.0 * x)))
            return total, np.zeros(self.shape)
        left = self.capacity - self.coded_load(M, Rt)
        if left < -1e-12:
            return math.inf, None
        s = lib.variances[None, :] * np.exp2(-2.0 * omega)
        R_hat = unicast_fill(q / n, s, q, max(left, 0.0))
        return expected_distortion_separable(lib, self.model, omega + R_hat), R_hat


class _SymmetricProblem(_Problem):
    def __init__(self, lib: SourceLibrary, q_vec, M: float, capacity: float, n: int):
        self.lib, self.q, self.n, self.capacity = lib, np.asarray(q_vec, dtype=float), int(n), float(capacity)
        self.shape = (lib.m,)
        self.budgets = np.array([float(M)])

    def coded_load(self, M, Rt) -> float:
        return rate_symmetric(M, Rt, self.q, self.n)

    def objective_and_unicast(self, M, Rt):
        left = self.capacity - self.coded_load(M, Rt)
        if left < -1e-12:
            return math.inf, None
        omega = M + Rt
        s = self.lib.variances * np.exp2(-2.0 * omega)
        R_hat = unicast_fill(self.q, s, self.n * self.q, max(left, 0.0))
        return float(np.sum(self.q * s * np.exp2(-2.0 * R_hat))), R_hat


def _multistart(problem: _Problem, starts: list, cfg: OptimizerConfig):
    trace: list = []
    best = None
    for r, z0 in enumerate(starts):
        z, f = problem.descend(np.asarray(z0, dtype=float), cfg, r, trace)
        if _better((f, z), best):
            best = (f, z)
    return best[1], best[0], trace


def _random_start(rng, shape, budgets, capacity, n):
    rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    m = shape[-1]
    M = np.vstack([rng.dirichlet(np.ones(m)) * budgets[i] * rng.uniform(0.5, 1.0) for i in range(rows)])
    Rt = rng.uniform(0.0, 2.0 * capacity / max(n, 1), size=(rows, m))
    Rt *= rng.random((rows, m)) < rng.uniform(0.3, 1.0)  # sparse supports reach the vertices
    return np.concatenate([M.reshape(shape).ravel(), Rt.reshape(shape).ravel()])


def _screened_starts(problem: _Problem, rng, count: int, cfg: OptimizerConfig, n: int) -> list:
    """The ``count`` best of ``cfg.screen_pool`` random starts, after repair."""
    pool = [problem.repair(_random_start(rng, problem.shape, problem.budgets, problem.capacity, n))
            for _ in range(max(count, cfg.screen_pool))]
    vals = [problem.value(z) for z in pool]
    order = sorted(range(len(pool)), key=lambda k: (vals[k], k))
    return [pool[k] for k in order[:count]]


# ---------------------------------------------------------------- programs


def optimize_general(
    lib: SourceLibrary, model: DemandModel, budgets, capacity: float, cfg: OptimizerConfig | None = None, warm_start=()
) -> CcCmSolution:
    """Per-receiver caching, multicast and unicast rates for arbitrary Q.

    The first start is the LC-U placement with no multicast, which makes the
    result at least as good as LC-U. The reported objective is the exact
    expectation over demands.
    """
    cfg = cfg or OptimizerConfig()
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    if lib.m != model.m:
        raise ValueError("library and demand model disagree on m")
    prob = _GeneralProblem(lib, model, budgets, capacity, cfg.unicast_mode)
    n, m = model.n, model.m
    rng = np.random.default_rng(cfg.seed)
    base = lcu_cache_plan(lib, model, prob.budgets).rates
    starts = [np.concatenate([base.ravel(), np.zeros(n * m)])]
    starts += [np.concatenate([base.ravel(), np.full(n * m, capacity / max(n, 1))])]
    starts += [np.concatenate([s.plan.cached.ravel(), s.plan.multicast.ravel()]) for s in warm_start]
    starts += _screened_starts(prob, rng, max(0, cfg.restarts + len(warm_start) - len(starts)), cfg, n)
    z, f, trace = _multistart(prob, starts, cfg)
    M, Rt = prob.split(z)
    obj, R_hat = prob.objective_and_unicast(M, Rt)
    plan = MulticastRatePlan(M, Rt, R_hat)
    sol = CcCmSolution(plan, obj, 0.0, trace, True, "general", None, {"unicast_mode": cfg.unicast_mode})
    return _finalise(sol, lib, model, capacity, cfg)


def optimize_symmetric(
    lib: SourceLibrary, q_vec, M: float, capacity: float, n: int, cfg: OptimizerConfig | None = None, warm_start=()
) -> CcCmSolution:
    """Per-file rates shared by all receivers (common Q row and cache size)."""
    cfg = cfg or OptimizerConfig()
    q = np.asarray(q_vec, dtype=float)
    if q.ndim != 1:
        if not np.allclose(q, q[0]):
            raise ValueError("symmetric program needs identical request rows")
        q = q[0]
    if np.ndim(M) > 0:
        Ms = np.asarray(M, dtype=float)
        if not np.allclose(Ms, Ms.flat[0]):
            raise ValueError("symmetric program needs equal cache sizes")
        M = float(Ms.flat[0])
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    model = as_demand_model(q, n)
    if cfg.unicast_mode == "per-demand":
        general = optimize_general(lib, model, M, capacity, cfg)
        return CcCmSolution(
            general.plan, general.objective, general.constraint_slack, general.solver_trace,
            general.feasible, "symmetric", None, {**general.meta, "solved_as": "general"},
        )
    prob = _SymmetricProblem(lib, q, M, capacity, n)
    m = lib.m
    rng = np.random.default_rng(cfg.seed)
    lcu_M = lcu_cache_plan(lib, as_demand_model(q, 1), M).rates[0]
    Mu = np.full(m, M / m)
    Rt_u = _uniform_multicast(M / m, capacity, n)
    starts = [
        np.concatenate([lcu_M, np.zeros(m)]),
        np.concatenate([Mu, np.full(m, Rt_u)]),
        np.concatenate([lcu_M, np.full(m, Rt_u)]),
    ]
    starts += [np.concatenate([s.plan.cached[0], s.plan.multicast[0]]) for s in warm_start]
    starts += _screened_starts(prob, rng, max(0, cfg.restarts + len(warm_start) - len(starts)), cfg, n)
    z, f, trace = _multistart(prob, starts, cfg)
    Mv, Rt = prob.split(z)
    obj, R_hat = prob.objective_and_unicast(Mv, Rt)
    plan = MulticastRatePlan.symmetric(Mv, Rt, n, R_hat)
    sol = CcCmSolution(plan, obj, 0.0, trace, True, "symmetric", None, {"unicast_mode": "per-file"})
    return _finalise(sol, lib, model, capacity, cfg)


def _uniform_multicast(Mt: float, capacity: float, n: int) -> float:
    """Largest R~ with ``rate_uniform(Mt, R~, n) <= capacity``."""
    if capacity <= 0:
        return 0.0
    if Mt <= 0:
        return capacity / n
    hi = capacity
    while rate_uniform(Mt, hi, n) < capacity:
        hi *= 2.0
    return brentq(lambda r: rate_uniform(Mt, r, n) - capacity, 0.0, hi, xtol=1e-13, rtol=1e-14)


def optimize_uniform(
    sigma2: float, M: float, capacity: float, n: int, m: int = 1, cfg: OptimizerConfig | None = None
) -> CcCmSolution:
    """Identical files, uniform popularity and equal caches.

    Every file gets ``M~ <= M / m`` cached and ``R~`` multicast, no unicast.
    For each M~ the load is increasing in R~, so the best R~ sits where the
    load meets the capacity (found by root bracketing). M~ itself is scanned;
    whether the full cache share is best is recorded, not assumed.
    """
    cfg = cfg or OptimizerConfig()
    if capacity < 0 or M < 0 or sigma2 <= 0:
        raise ValueError("need capacity >= 0, M >= 0 and sigma2 > 0")
    cap = M / m
    grid = np.linspace(0.0, cap, 201) if cap > 0 else np.zeros(1)
    totals = np.array([mt + _uniform_multicast(mt, capacity, n) for mt in grid])
    k = int(np.argmax(totals))
    Mt = float(grid[k])
    if 0 < k < grid.size - 1:  # interior optimum: polish
        lo, hi = grid[k - 1], grid[k + 1]
        for _ in range(60):
            a, b = lo + (hi - lo) * 0.382, lo + (hi - lo) * 0.618
            if a + _uniform_multicast(a, capacity, n) >= b + _uniform_multicast(b, capacity, n):
                hi = b
            else:
                lo = a
        Mt = 0.5 * (lo + hi)
    Rt = _uniform_multicast(Mt, capacity, n)
    trace = [{"restart": 0, "iteration": i, "objective": float(sigma2 * np.exp2(-2.0 * t))} for i, t in enumerate(totals)]
    plan = MulticastRatePlan.symmetric(np.full(m, Mt), np.full(m, Rt), n)
    load = rate_uniform(Mt, Rt, n)
    meta = {"Mt": Mt, "Rt": Rt, "cache_tight": bool(k == grid.size - 1), "unicast_mode": "per-file"}
    return CcCmSolution(
        plan, float(sigma2 * np.exp2(-2.0 * (Mt + Rt))), capacity - load, trace,
        bool(load <= capacity + cfg.tolerance), "uniform", None, meta,
    )


def _rlfu_batch(sig, q, n, capacity, mt, Mt, Rt):
    """Objective of RLFU designs (vectorised over the (Mt, Rt) arrays)."""
    G = popular_mass(q, mt)
    Mt = np.asarray(Mt, dtype=float).ravel()
    Rt = np.asarray(Rt, dtype=float).ravel()
    load = np.array([rate_rlfu(a, b, mt, q, n) for a, b in zip(Mt, Rt)])
    left = capacity - load
    head = np.arange(q.size) < mt
    omega = np.where(head[None, :], Mt[:, None] + Rt[:, None], Rt[:, None])
    lg = np.log2(2.0 * LN2 * sig[None, :] / n) - 2.0 * omega
    x, _ = waterfill_levels(lg, np.broadcast_to(n * q, lg.shape), np.maximum(left, 0.0))
    x = np.where(left[:, None] > 0, x, 0.0)
    obj = np.sum(q * sig * np.exp2(-2.0 * (omega + x)), axis=1)
    obj = np.where(left >= -1e-12, obj, np.inf)
    return obj, x, load, G


def optimize_rlfu(
    lib: SourceLibrary, q_vec, M: float, capacity: float, n: int, cfg: OptimizerConfig | None = None, warm_start=()
) -> CcCmSolution:
    """Truncated-uniform caching of the ``m~`` most popular files.

    For every cutoff in the scan, (M~, R~) is searched on a grid with
    ``M~ <= M / m~`` and then refined by a shrinking pattern search. The
    unicast leftover is water-filled per file. Files outside the cutoff are
    delivered at R~ without caching, which is how the load formula charges
    them. Files are assumed sorted by decreasing popularity.
    """
    cfg = cfg or OptimizerConfig()
    q = np.asarray(q_vec, dtype=float)
    if capacity < 0 or M < 0:
        raise ValueError("capacity and cache size must be non-negative")
    if np.any(np.diff(q) > 1e-15):
        raise ValueError("RLFU expects files sorted by decreasing popularity")
    sig = lib.variances
    cand = _cutoffs(M, q.size, cfg.rlfu_cutoff_scan)
    g = cfg.grid_points
    trace: list = []
    best = None
    warm = [(s.m_tilde, s.meta["Mt"], s.meta["Rt"]) for s in warm_start if s.m_tilde is not None]
    for r, mt in enumerate(cand):
        cap = M / mt
        Mts = np.linspace(0.0, cap, g) if cap > 0 else np.zeros(1)
        rows = []
        for a in Mts:
            top = _rlfu_max_rt(a, mt, q, n, capacity)
            rows.append(np.column_stack([np.full(g, a), np.linspace(0.0, top, g)]))
        pts = np.vstack(rows)
        pts = np.vstack([pts] + [np.array([[a, b]]) for w_mt, a, b in warm if w_mt == mt and a <= cap + 1e-12])
        obj = _rlfu_batch(sig, q, n, capacity, mt, pts[:, 0], pts[:, 1])[0]
        k = int(np.argmin(obj))
        x = pts[k].copy()
        f = float(obj[k])
        trace.append({"restart": r, "iteration": 0, "objective": f, "m_tilde": mt})
        step = np.array([max(cap, 1e-3), max(x[1], 1e-3)]) / (g - 1)
        it = 0
        while np.any(step > 1e-10) and it < 100 * cfg.max_iterations:
            it += 1
            moved = False
            for dx in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)):
                y = x + step * np.array(dx)
                if y[0] < 0 or y[0] > cap or y[1] < 0:
                    continue
                fy = float(_rlfu_batch(sig, q, n, capacity, mt, y[:1], y[1:])[0][0])
                if fy < f:
                    x, f, moved = y, fy, True
                    trace.append({"restart": r, "iteration": it, "objective": f, "m_tilde": mt})
                    break
            if not moved:
                step = step * 0.5
        if _better((f, np.array([mt, *x])), None if best is None else (best[0], np.array([best[1], *best[2]]))):
            best = (f, mt, x)
    f, mt, (Mt, Rt) = best
    obj, x, load, G = _rlfu_batch(sig, q, n, capacity, mt, [Mt], [Rt])
    head = np.arange(q.size) < mt
    plan = MulticastRatePlan.symmetric(np.where(head, Mt, 0.0), np.full(q.size, Rt), n, x[0])
    meta = {"Mt": float(Mt), "Rt": float(Rt), "G": G, "cutoffs": cand, "unicast_mode": "per-file"}
    slack = capacity - (float(load[0]) + n * float(np.dot(q, x[0])))
    return CcCmSolution(plan, float(obj[0]), slack, trace, slack >= -cfg.tolerance, "rlfu", int(mt), meta)


def _rlfu_max_rt(Mt: float, mt: int, q, n: int, capacity: float) -> float:
    if capacity <= 0:
        return 0.0
    hi = capacity
    while rate_rlfu(Mt, hi, mt, q, n) < capacity:
        hi *= 2.0
    return brentq(lambda r: rate_rlfu(Mt, r, mt, q, n) - capacity, 0.0, hi, xtol=1e-13, rtol=1e-14)


# ------------------------------------------------ independent re-check


def link_load(sol: CcCmSolution, model: DemandModel) -> float:
    """Constrained link load of a solution, recomputed from its plan alone."""
    plan, n, q = sol.plan, model.n, model.q
    if sol.scheme == "rlfu":
        coded = rate_rlfu(sol.meta["Mt"], sol.meta["Rt"], sol.m_tilde, q[0], n)
        return coded + n * float(np.dot(q[0], plan.unicast[0]))
    if sol.scheme == "uniform":
        return rate_uniform(float(plan.cached[0, 0]), float(plan.multicast[0, 0]), n)
    if sol.meta.get("unicast_mode") == "per-demand":
        D, P = enumerate_demands(model)
        return max(rate_gcc_demand(plan, d) for d, p in zip(D, P) if p > 0)
    if plan.is_symmetric() and model.is_symmetric():
        coded = rate_symmetric(plan.cached[0], plan.multicast[0], q[0], n)
    else:
        coded = rate_gcc_average(plan, model, gamma_samples=None)
    return coded + float(np.sum(q * plan.unicast))


def check_solution(sol: CcCmSolution, model: DemandModel, capacity: float, budgets, tol: float = 1e-6) -> float:
    """Slack of every constraint, recomputed; raises when one is violated."""
    plan = sol.plan
    for name, a in (("cached", plan.cached), ("multicast", plan.multicast), ("unicast", plan.unicast)):
        if np.any(a < -tol):
            raise AssertionError(f"negative {name} rate")
    b = np.broadcast_to(np.asarray(budgets, dtype=float), (plan.n,))
    if np.any(plan.cached.sum(axis=1) > b + tol):
        raise AssertionError("cache budget exceeded")
    slack = capacity - link_load(sol, model)
    if slack < -tol:
        raise AssertionError(f"link load exceeds capacity by {-slack:.3g}")
    return slack


def _finalise(sol: CcCmSolution, lib, model, capacity, cfg) -> CcCmSolution:
    slack = capacity - link_load(sol, model)
    ok = slack >= -cfg.tolerance and all(np.all(a >= 0) for a in (sol.plan.cached, sol.plan.multicast, sol.plan.unicast))
    return CcCmSolution(sol.plan, sol.objective, slack, sol.solver_trace, bool(ok), sol.scheme, sol.m_tilde, sol.meta)


# ---------------------------------------------------------------- storage


def solution_to_dict(sol: CcCmSolution) -> dict:
    return {
        "scheme": sol.scheme,
        "objective": sol.objective,
        "constraint_slack": sol.constraint_slack,
        "feasible": sol.feasible,
        "m_tilde": sol.m_tilde,
        "meta": sol.meta,
        "cached": sol.plan.cached.tolist(),
        "multicast": sol.plan.multicast.tolist(),
        "unicast": sol.plan.unicast.tolist(),
        "solver_trace": sol.solver_trace,
    }


def solution_from_dict(d: dict) -> CcCmSolution:
    plan = MulticastRatePlan(np.array(d["cached"]), np.array(d["multicast"]), np.array(d["unicast"]))
    return CcCmSolution(
        plan, float(d["objective"]), float(d["constraint_slack"]), list(d.get("solver_trace", [])),
        bool(d["feasible"]), d["scheme"], d.get("m_tilde"), dict(d.get("meta", {})),
    )


def save_solution(sol: CcCmSolution, path) -> None:
    Path(path).write_text(json.dumps(solution_to_dict(sol), indent=1, sort_keys=True) + "\n")


def load_solution(path) -> CcCmSolution:
    return solution_from_dict(json.loads(Path(path).read_text()))
