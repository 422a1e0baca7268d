import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachecast import oracles
from cachecast.multicast.conflict import build_conflict_graph, color_count, gcc_color
from cachecast.multicast.packets import packetize
from cachecast.multicast.rates import MulticastRatePlan
from cachecast.validation import random_conflict_graph


def plan_of(M, Rt):
    return MulticastRatePlan(np.atleast_2d(M).astype(float), np.atleast_2d(Rt).astype(float))


def random_placement(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    plan = plan_of(rng.integers(0, 3, (n, m)) / 2, rng.integers(0, 3, (n, m)) / 2)
    pl = packetize(plan, int(rng.integers(1, 4)), rng=rng)
    return plan, pl, rng.integers(0, m, n)


def reference_edges(pl, d):
    """Vertices and conflict pairs written straight from the definition."""
    verts = []
    for i, f in enumerate(d):
        held = set(pl.cached_packets[i][f].tolist())
        verts += [(i, int(f), k) for k in range(int(pl.range_packets[i, f])) if k not in held]

    def holds(u, f, k):
        return k < pl.range_packets[u, f] and k in set(pl.cached_packets[u][f].tolist())

    edges = set()
    for a, (i, f, k) in enumerate(verts):
        for b in range(a + 1, len(verts)):
            j, g, h = verts[b]
            if (f, k) == (g, h):
                continue
            if i == j or not (holds(i, g, h) and holds(j, f, k)):
                edges.add((a, b))
    return verts, edges


# ---------------------------------------------------------------- packetization


def test_layer_counts_from_rates():
    pl = packetize(plan_of([[1.0]], [[0.5]]), 4, rng=np.random.default_rng(0))
    assert pl.layer_rate == pytest.approx(0.5)
    assert pl.cached_layers[0, 0] == pytest.approx(2)
    assert pl.multicast_layers[0, 0] == pytest.approx(1)
    assert pl.storing_range[0, 0] == pytest.approx(3)
    assert not pl.fractional


def test_cached_packet_count():
    pl = packetize(plan_of([[0.75]], [[0.75]]), 5, rng=np.random.default_rng(0), layer_rate=0.25)
    assert pl.range_packets[0, 0] == 30
    assert len(pl.cached_packets[0][0]) == 15
    assert pl.packet_rate == pytest.approx(0.05)


def test_packet_cache_frequency():
    plan = plan_of([[0.5]], [[0.5]])
    rng = np.random.default_rng(1)
    draws, hits = 10**4, 0
    for _ in range(draws):
        pl = packetize(plan, 3, rng=rng, layer_rate=0.5)
        hits += int(0 in pl.cached_packets[0][0])
    p = 0.5
    assert abs(hits - draws * p) <= 3 * np.sqrt(draws * p * (1 - p))


def test_irrational_rates_fall_back_to_fractional_layers():
    pl = packetize(plan_of([[np.sqrt(2) / 10]], [[1 / 3]]), 10, rng=np.random.default_rng(0))
    assert pl.fractional
    assert pl.storing_range[0, 0] == pytest.approx(1.0)


def test_packetize_rejects_bad_arguments():
    plan = plan_of([[0.5]], [[0.5]])
    with pytest.raises(ValueError):
        packetize(plan, 0)
    with pytest.raises(ValueError):
        packetize(plan, 2, layer_rate=0.0)


@given(st.integers(0, 2**32 - 1))
def test_cached_packets_lie_in_the_storing_range(seed):
    plan, pl, _ = random_placement(seed)
    for i in range(plan.n):
        for j in range(plan.m):
            idx = pl.cached_packets[i][j]
            assert len(idx) == min(int(np.rint(pl.cached_layers[i, j] * pl.packets_per_layer)), pl.range_packets[i, j])
            assert np.all(np.diff(idx) > 0)
            assert np.all((idx >= 0) & (idx < pl.range_packets[i, j]))


# ---------------------------------------------------------------- conflict graph


def test_fully_cached_range_gives_empty_graph():
    pl = packetize(plan_of([[1.0, 1.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]]), 4, rng=np.random.default_rng(0))
    assert len(build_conflict_graph(pl, [0, 1])) == 0


def test_single_receiver_needs_one_color_per_missing_packet():
    pl = packetize(plan_of([[1.0, 0.5]], [[1.0, 0.5]]), 4, rng=np.random.default_rng(0), layer_rate=0.5)
    g = build_conflict_graph(pl, [0])
    missing = int(pl.range_packets[0, 0]) - len(pl.cached_packets[0][0])
    assert len(g) == missing
    assert color_count(gcc_color(g)) == missing
    assert color_count(gcc_color(g, refine=False)) == missing


def test_shared_uncached_packet_is_not_a_conflict():
    # nothing cached: both receivers ask for the same packets of file 0
    pl = packetize(plan_of([[0.0], [0.0]], [[1.0], [1.0]]), 3, rng=np.random.default_rng(0))
    g = build_conflict_graph(pl, [0, 0])
    assert len(g) == 6
    assert color_count(gcc_color(g)) == 3


@given(st.integers(0, 2**32 - 1))
def test_conflicts_match_definition(seed):
    _, pl, d = random_placement(seed)
    g = build_conflict_graph(pl, d)
    verts, edges = reference_edges(pl, d)
    assert g.vertices == verts
    assert set(g.edges()) == edges
    A = g.adjacency()
    assert np.array_equal(A, A.T) and not A.diagonal().any()


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_coloring_is_proper(seed, refine):
    _, pl, d = random_placement(seed)
    g = build_conflict_graph(pl, d)
    colors = gcc_color(g, refine=refine)
    assert oracles.is_proper_coloring(g, colors)
    assert g.is_proper(colors)
    assert color_count(colors) <= len(g)


def test_refined_coloring_within_one_of_chromatic_number():
    rng = np.random.default_rng(21)
    for _ in range(60):
        g = random_conflict_graph(rng)
        chi = oracles.chromatic_number(g.adjacency())
        used = color_count(gcc_color(g))
        assert chi <= used <= chi + 1


def test_refine_never_uses_more_colors():
    rng = np.random.default_rng(22)
    for _ in range(60):
        g = random_conflict_graph(rng, max_vertices=40)
        assert color_count(gcc_color(g)) <= color_count(gcc_color(g, refine=False))


def test_improper_coloring_detected():
    pl = packetize(plan_of([[0.0]], [[1.0]]), 3, rng=np.random.default_rng(0))
    g = build_conflict_graph(pl, [0])
    assert not g.is_proper([0, 0, 1])
    assert not oracles.is_proper_coloring(g, [0, 0, 1])
