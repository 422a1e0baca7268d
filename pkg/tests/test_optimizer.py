import itertools
import json
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachecast.lcu import lcu_expected_distortion, reverse_waterfill
from cachecast.optimizer import (
    OptimizerConfig,
    check_solution,
    load_solution,
    optimize_general,
    optimize_rlfu,
    optimize_symmetric,
    optimize_uniform,
    project_capped_simplex,
    save_solution,
    solution_from_dict,
    solution_to_dict,
    unicast_fill,
)
from cachecast.source_model import DemandModel, SourceLibrary, zipf_demand

GRID_TOL = 1e-3


def cache_rows(cap, h, k):
    """All length-k vectors on the h-grid with sum <= cap."""
    top = int(round(cap / h))
    return [np.array(c) * h for c in itertools.product(range(top + 1), repeat=k) if sum(c) <= top]


def pair_load(q, M, Rt):
    """Averaged coded load for two receivers, expanded by hand."""
    w = M + Rt
    pc = np.where(w > 0, M / np.where(w > 0, w, 1.0), 1.0)
    psi = 0.0
    for d0, d1 in itertools.product(range(q.shape[1]), repeat=2):
        w0, w1 = w[0, d0], w[1, d1]
        a0, a1 = pc[0, d0], pc[1, d1]  # requester holds its own packet
        b0, b1 = pc[1, d0], pc[0, d1]  # the other receiver holds it
        alone = w0 * (1 - a0) * (1 - b0) + w1 * (1 - a1) * (1 - b1)
        psi += q[0, d0] * q[1, d1] * (alone + max(w0 * (1 - a0) * b0, w1 * (1 - a1) * b1))
    requested = 1 - np.prod(1 - q, axis=0)
    return min(psi, float(np.sum(requested * w.max(axis=0))))


def symmetric_load(q, Mv, Rt, n):
    """Binomial form of the symmetric load with E[max] over explicit draws."""
    w = Mv + Rt
    pc = np.where(w > 0, Mv / np.where(w > 0, w, 1.0), 1.0)
    psi = 0.0
    for l in range(1, n + 1):
        h = comb(n, l) * pc ** (l - 1) * (1 - pc) ** (n - l + 1) * w
        for draw in itertools.product(range(q.size), repeat=l):
            psi += np.prod(q[list(draw)]) * h[list(draw)].max()
    return min(psi, float(np.sum((1 - (1 - q) ** n) * w)))


def assert_trace_descends(sol):
    by_restart = {}
    for row in sol.solver_trace:
        by_restart.setdefault(row["restart"], []).append(row["objective"])
    for vals in by_restart.values():
        assert np.all(np.diff(vals) <= 1e-12)


# ---------------------------------------------------------------- helpers


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_projection_lands_in_capped_simplex(seed, cap):
    x = np.random.default_rng(seed).normal(0, 2, 5)
    y = project_capped_simplex(x, cap)
    assert np.all(y >= 0) and y.sum() <= cap + 1e-9
    # no feasible point is closer
    z = project_capped_simplex(y + np.random.default_rng(seed + 1).normal(0, 0.1, 5), cap)
    assert np.linalg.norm(x - y) <= np.linalg.norm(x - z) + 1e-9


def test_unicast_fill_matches_water_filling():
    w, s, c = np.array([0.5, 0.3, 0.2]), np.array([1.0, 2.0, 0.5]), np.array([1.0, 2.0, 0.5])
    x = unicast_fill(w, s, c, 1.2)
    ref = reverse_waterfill(w, s, 1.2, costs=c).allocation
    assert np.allclose(x, ref, atol=1e-10)
    assert np.all(unicast_fill(w, s, c, 0.0) == 0)


def test_config_validation():
    for bad in (
        {"restarts": 0},
        {"max_iterations": 0},
        {"tolerance": 0.0},
        {"step_rule": "newton"},
        {"unicast_mode": "per-user"},
        {"grid_points": 2},
        {"screen_pool": -1},
        {"polish_evaluations": -1},
    ):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


# ---------------------------------------------------------------- general


def test_general_matches_grid_oracle():
    lib = SourceLibrary([1.4, 0.9])
    model = DemandModel([[0.7, 0.3], [0.4, 0.6]])
    budget, R, h = 0.1, 0.2, 0.05
    q, s = model.q, lib.variances
    best = np.inf
    for M0, M1 in itertools.product(cache_rows(budget, h, 2), repeat=2):
        M = np.array([M0, M1])
        for rt in itertools.product(np.arange(0, R + 1e-9, h), repeat=4):
            Rt = np.array(rt).reshape(2, 2)
            load = pair_load(q, M, Rt)
            if load > R + 1e-12:
                continue
            w = M + Rt
            x = 0.0
            if R - load > 0:
                x = reverse_waterfill((q / 2).ravel(), (s * 2.0 ** (-2 * w)).ravel(), R - load, costs=q.ravel())
                x = x.allocation.reshape(2, 2)
            best = min(best, float(np.sum(q * s * 2.0 ** (-2 * (w + x))) / 2))
    sol = optimize_general(lib, model, budget, R)
    assert sol.feasible
    check_solution(sol, model, R, budget)
    assert sol.objective <= best + GRID_TOL
    assert_trace_descends(sol)


def test_zero_capacity_is_cached_only(rng):
    lib = SourceLibrary(rng.uniform(0.7, 1.6, 3))
    model = DemandModel(rng.dirichlet(np.ones(3), size=2))
    sol = optimize_general(lib, model, [0.6, 1.0], 0.0)
    ref = lcu_expected_distortion(lib, model, [0.6, 1.0], 0.0).value
    assert sol.objective == pytest.approx(ref, rel=1e-6)
    assert np.all(sol.plan.multicast == 0) and np.all(sol.plan.unicast == 0)


def test_single_receiver_per_demand_equals_lcu():
    lib = SourceLibrary([1.6, 1.0, 0.7])
    model = zipf_demand(3, 0.8, 1)
    cfg = OptimizerConfig(unicast_mode="per-demand", restarts=4)
    for M, R in ((0.5, 0.5), (0.0, 1.0)):
        sol = optimize_general(lib, model, M, R, cfg)
        check_solution(sol, model, R, M)
        assert sol.objective == pytest.approx(lcu_expected_distortion(lib, model, M, R).value, abs=1e-4)


def test_more_capacity_never_hurts(rng):
    lib = SourceLibrary(rng.uniform(0.7, 1.6, 3))
    model = DemandModel(rng.dirichlet(np.ones(3), size=2))
    cfg = OptimizerConfig(restarts=3)
    small = optimize_general(lib, model, 0.5, 0.5, cfg)
    large = optimize_general(lib, model, 0.5, 5.0, cfg, warm_start=[small])
    assert large.objective <= small.objective + 1e-9


def test_general_rejects_bad_input():
    lib = SourceLibrary([1.0, 1.0])
    with pytest.raises(ValueError):
        optimize_general(lib, zipf_demand(2, 0.0, 2), 1.0, -1.0)
    with pytest.raises(ValueError):
        optimize_general(lib, zipf_demand(3, 0.0, 2), 1.0, 1.0)


# ---------------------------------------------------------------- symmetric


def test_symmetric_matches_grid_oracle():
    lib = SourceLibrary([1.5, 1.0, 0.8])
    q, n, M, R, h = np.array([0.5, 0.3, 0.2]), 4, 0.3, 0.4, 0.1
    s = lib.variances
    best = np.inf
    for Mv in cache_rows(M, h, 3):
        for rt in itertools.product(np.arange(0, R + 1e-9, h), repeat=3):
            Rt = np.array(rt)
            load = symmetric_load(q, Mv, Rt, n)
            if load > R + 1e-12:
                continue
            w = Mv + Rt
            x = reverse_waterfill(q, s * 2.0 ** (-2 * w), R - load, costs=n * q).allocation if R - load > 0 else 0.0
            best = min(best, float(np.sum(q * s * 2.0 ** (-2 * (w + x)))))
    sol = optimize_symmetric(lib, q, M, R, n)
    assert sol.feasible
    check_solution(sol, DemandModel(np.tile(q, (n, 1))), R, M)
    assert sol.objective <= best + GRID_TOL
    assert_trace_descends(sol)


def test_one_file_symmetric_agrees_with_uniform():
    uni = optimize_uniform(1.3, 0.5, 0.8, 4)
    sym = optimize_symmetric(SourceLibrary([1.3]), [1.0], 0.5, 0.8, 4)
    assert sym.objective == pytest.approx(uni.objective, rel=1e-3)


def test_symmetric_rejects_asymmetric_input():
    lib = SourceLibrary([1.0, 1.0])
    with pytest.raises(ValueError):
        optimize_symmetric(lib, [[0.5, 0.5], [0.2, 0.8]], 1.0, 1.0, 2)
    with pytest.raises(ValueError):
        optimize_symmetric(lib, [0.5, 0.5], [1.0, 2.0], 1.0, 2)


# ---------------------------------------------------------------- uniform


def test_uniform_zero_capacity():
    sol = optimize_uniform(1.5, 0.5, 0.0, 5)
    assert sol.plan.multicast.max() == 0.0
    assert sol.objective == pytest.approx(1.5 * 2.0 ** (-2 * 0.5))


def test_uniform_single_receiver_multicasts_whole_link():
    sol = optimize_uniform(1.0, 0.3, 0.7, 1)
    assert sol.meta["Rt"] == pytest.approx(0.7, rel=1e-9)


def test_uniform_matches_two_dimensional_grid():
    sigma2, n, m, M, R, h = 1.5, 20, 100, 50.0, 10.0, 0.01
    sol = optimize_uniform(sigma2, M, R, n, m=m)
    Mt, Rt = np.meshgrid(np.arange(0, 0.5 + 1e-9, h), np.arange(0, 1.0 + 1e-9, h), indexing="ij")
    p = np.where(Mt + Rt > 0, Mt / np.where(Mt + Rt > 0, Mt + Rt, 1.0), 1.0)
    load = sum(comb(n, l) * p ** (l - 1) * (1 - p) ** (n - l + 1) for l in range(1, n + 1)) * (Mt + Rt)
    best = float(np.max(np.where(load <= R, Mt + Rt, -np.inf)))
    total = sol.meta["Mt"] + sol.meta["Rt"]
    assert total >= best - 1e-3
    assert sol.feasible and sol.constraint_slack >= -1e-9
    assert sol.objective == pytest.approx(sigma2 * 2.0 ** (-2 * total))


def test_uniform_rejects_bad_input():
    with pytest.raises(ValueError):
        optimize_uniform(0.0, 1.0, 1.0, 2)
    with pytest.raises(ValueError):
        optimize_uniform(1.0, -1.0, 1.0, 2)


# ---------------------------------------------------------------- RLFU


def test_rlfu_uniform_popularity_caches_every_file():
    m, n = 10, 5
    sol = optimize_rlfu(SourceLibrary.constant(m, 1.0), np.full(m, 1 / m), 3.0, 2.0, n)
    assert sol.m_tilde == m
    check_solution(sol, zipf_demand(m, 0.0, n), 2.0, 3.0)


def test_rlfu_without_cache_caches_nothing():
    lib = SourceLibrary([1.5, 1.0, 0.8, 0.6])
    q = zipf_demand(4, 0.8).q[0]
    sol = optimize_rlfu(lib, q, 0.0, 1.0, 3)
    assert np.all(sol.plan.cached == 0)
    check_solution(sol, DemandModel(np.tile(q, (3, 1))), 1.0, 0.0)


def test_rlfu_input_errors():
    lib = SourceLibrary([1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        optimize_rlfu(lib, [0.2, 0.3, 0.5], 1.0, 1.0, 2)
    with pytest.raises(ValueError):
        optimize_rlfu(lib, [0.5, 0.3, 0.2], 1.0, 1.0, 2, OptimizerConfig(rlfu_cutoff_scan=()))
    with pytest.raises(ValueError):
        optimize_rlfu(lib, [0.5, 0.3, 0.2], 1.0, 1.0, 2, OptimizerConfig(rlfu_cutoff_scan=(4,)))


# ---------------------------------------------------------------- storage


def test_solution_round_trip(tmp_path):
    lib = SourceLibrary([1.4, 0.9])
    model = DemandModel([[0.7, 0.3], [0.4, 0.6]])
    sol = optimize_general(lib, model, 0.3, 0.5, OptimizerConfig(restarts=2))
    path = tmp_path / "sol.json"
    save_solution(sol, path)
    back = load_solution(path)
    assert np.array_equal(back.plan.cached, sol.plan.cached)
    assert np.array_equal(back.plan.multicast, sol.plan.multicast)
    assert back.objective == sol.objective and back.scheme == sol.scheme
    assert solution_to_dict(solution_from_dict(json.loads(path.read_text()))) == json.loads(path.read_text())
