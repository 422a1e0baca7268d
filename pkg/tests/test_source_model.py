import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachecast.source_model import (
    CachePlan,
    CapacityError,
    DemandModel,
    MonteCarlo,
    SourceLibrary,
    demand_probability,
    distortion,
    enumerate_demands,
    expected_distortion,
    parse_mode,
    sample_demand,
    zipf_demand,
)


def random_model(rng, n, m):
    return DemandModel(rng.dirichlet(np.ones(m), size=n))


# ---------------------------------------------------------------- types


def test_library_rejects_bad_variances():
    with pytest.raises(ValueError):
        SourceLibrary([1.0, 0.0])
    with pytest.raises(ValueError):
        SourceLibrary([])
    with pytest.raises(ValueError):
        SourceLibrary([1.0], samples_per_file=0)


def test_library_is_immutable():
    lib = SourceLibrary([1.0, 2.0])
    with pytest.raises(ValueError):
        lib.variances[0] = 3.0


def test_uniform_random_library_is_seeded():
    a = SourceLibrary.uniform_random(50, 0.7, 1.6, seed=3)
    b = SourceLibrary.uniform_random(50, 0.7, 1.6, seed=3)
    assert np.array_equal(a.variances, b.variances)
    assert a.variances.min() >= 0.7 and a.variances.max() <= 1.6


def test_demand_model_validates_rows():
    with pytest.raises(ValueError):
        DemandModel([[0.5, 0.6]])
    with pytest.raises(ValueError):
        DemandModel([[1.2, -0.2]])
    DemandModel([[0.5, 0.5 + 5e-10]])


def test_cache_plan_budget_and_distribution():
    plan = CachePlan([[0.5, 1.0], [0.0, 0.0]], budgets=[2.0, 0.0])
    assert np.allclose(plan.distribution(), [[0.25, 0.5], [0.0, 0.0]])
    assert plan.distribution()[0].sum() <= 1.0
    with pytest.raises(ValueError):
        CachePlan([[1.0, 1.5]], budgets=[2.0])
    with pytest.raises(ValueError):
        CachePlan([[-0.1, 0.0]])


# ---------------------------------------------------------------- zipf


def test_zipf_uniform_at_zero_exponent():
    assert np.allclose(zipf_demand(2, 0.0).q, [[0.5, 0.5]])


def test_zipf_harmonic_weights():
    assert np.allclose(zipf_demand(2, 1.0).q, [[2 / 3, 1 / 3]])


def test_zipf_large_instance_structure():
    model = zipf_demand(100, 0.6, 20)
    assert model.q.shape == (20, 100)
    assert np.allclose(model.q.sum(axis=1), 1.0, atol=1e-9)
    assert model.q[0, 0] > model.q[0, -1]
    assert model.is_symmetric()


@given(st.integers(1, 60), st.floats(0.0, 3.0), st.integers(1, 5))
def test_zipf_rows_are_normalised_and_decreasing(m, alpha, n):
    q = zipf_demand(m, alpha, n).q
    assert np.all(np.abs(q.sum(axis=1) - 1.0) <= 1e-9)
    assert np.all(np.diff(q[0]) <= 1e-15)


# ---------------------------------------------------------------- distortion


def test_distortion_values():
    assert distortion(1.0, 0.0) == 1.0
    assert distortion(4.0, 1.0) == 1.0
    assert distortion(1.5, 2.5) == pytest.approx(0.046875, rel=1e-15)


def test_distortion_rejects_negative_rate():
    with pytest.raises(ValueError):
        distortion(1.0, -0.1)


@given(st.floats(0.01, 10.0), st.floats(0.0, 8.0), st.floats(0.0, 8.0))
def test_distortion_composes_over_successive_rates(s, r1, r2):
    assert distortion(s, r1 + r2) == pytest.approx(distortion(s, r1) * 2.0 ** (-2.0 * r2), rel=1e-12)


@given(st.floats(0.01, 10.0), st.floats(0.0, 8.0), st.floats(1e-3, 2.0))
def test_distortion_strictly_decreasing(s, r, dr):
    assert distortion(s, r + dr) < distortion(s, r)


# ---------------------------------------------------------------- demands


def test_demand_probability_uniform():
    model = zipf_demand(2, 0.0, 2)
    for d in itertools.product(range(2), repeat=2):
        assert demand_probability(model, d) == pytest.approx(0.25)


def test_demand_probability_deterministic_row():
    model = DemandModel([[1.0, 0.0], [0.3, 0.7]])
    assert demand_probability(model, [0, 1]) == pytest.approx(0.7)


def test_demand_probability_large_instance_matches_product(rng):
    model = zipf_demand(100, 0.6, 20)
    d = rng.integers(0, 100, size=20)
    expected = 1.0
    for i, f in enumerate(d):
        expected *= model.q[i, f]
    assert demand_probability(model, d) == pytest.approx(expected, rel=1e-12)


def test_demand_probability_rejects_bad_index():
    model = zipf_demand(3, 0.0, 2)
    with pytest.raises(IndexError):
        demand_probability(model, [0, 3])
    with pytest.raises(IndexError):
        demand_probability(model, [0])


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_demand_probabilities_sum_to_one(n, m, seed):
    model = random_model(np.random.default_rng(seed), n, m)
    _, probs = enumerate_demands(model)
    assert abs(probs.sum() - 1.0) <= 1e-9


def test_sample_demand_degenerate_row(rng):
    model = DemandModel([[0.0, 1.0], [0.5, 0.5]])
    d = sample_demand(model, rng, 500)
    assert np.all(d[:, 0] == 1)


def test_sample_demand_frequencies_uniform():
    m, draws = 5, 10**5
    d = sample_demand(zipf_demand(m, 0.0), np.random.default_rng(0), draws)
    counts = np.bincount(d[:, 0], minlength=m)
    sd = np.sqrt(draws * (1 / m) * (1 - 1 / m))
    assert np.all(np.abs(counts - draws / m) <= 3 * sd)


def test_sample_demand_is_reproducible():
    model = zipf_demand(10, 0.8, 4)
    a = sample_demand(model, np.random.default_rng(9), 100)
    b = sample_demand(model, np.random.default_rng(9), 100)
    assert np.array_equal(a, b)
    assert sample_demand(model, np.random.default_rng(9)).shape == (4,)


def test_enumeration_cap():
    with pytest.raises(CapacityError):
        enumerate_demands(zipf_demand(100, 0.6, 20))


# ---------------------------------------------------------------- objective


def test_expected_distortion_nothing_cached_or_sent():
    lib = SourceLibrary([1.6, 1.0, 0.7])
    model = DemandModel(np.tile([0.6, 0.3, 0.1], (2, 1)))
    e = expected_distortion(lib, model, CachePlan.empty(2, 3))
    assert e.value == pytest.approx(0.6 * 1.6 + 0.3 * 1.0 + 0.1 * 0.7, rel=1e-12)
    assert e.exact and e.stderr == 0.0


def test_expected_distortion_single_cell():
    lib = SourceLibrary([4.0])
    e = expected_distortion(lib, DemandModel([[1.0]]), CachePlan([[1.0]]))
    assert e.value == pytest.approx(1.0)


def test_expected_distortion_exact_matches_enumeration(rng):
    lib = SourceLibrary(rng.uniform(0.5, 2.0, 2))
    model = random_model(rng, 2, 2)
    cache = CachePlan(rng.uniform(0, 1, (2, 2)))
    rate = lambda d: np.array([0.3 + 0.1 * d[0], 0.2 * d[1]])
    brute = 0.0
    for d in itertools.product(range(2), repeat=2):
        p = model.q[0, d[0]] * model.q[1, d[1]]
        r = rate(np.array(d))
        brute += p * np.mean([lib.variances[d[i]] * 2 ** (-2 * (cache.rates[i, d[i]] + r[i])) for i in range(2)])
    assert expected_distortion(lib, model, cache, rate).value == pytest.approx(brute, rel=1e-12)


def test_expected_distortion_monte_carlo_agrees_with_exact(rng):
    lib = SourceLibrary(rng.uniform(0.5, 2.0, 3))
    model = random_model(rng, 2, 3)
    cache = CachePlan(rng.uniform(0, 1, (2, 3)))
    rate = lambda d: 0.2 * (d + 1.0)
    exact = expected_distortion(lib, model, cache, rate)
    mc = expected_distortion(lib, model, cache, rate, mode=MonteCarlo(10**5, 1))
    assert not mc.exact and mc.stderr > 0
    assert abs(mc.value - exact.value) <= 4 * mc.stderr


def test_expected_distortion_exact_cap():
    lib = SourceLibrary.constant(100, 1.0)
    model = zipf_demand(100, 0.6, 20)
    with pytest.raises(CapacityError):
        expected_distortion(lib, model, CachePlan.empty(20, 100))


def test_expected_distortion_rejects_negative_rates():
    lib = SourceLibrary([1.0])
    with pytest.raises(ValueError):
        expected_distortion(lib, DemandModel([[1.0]]), CachePlan([[0.0]]), lambda d: np.array([-1.0]))


@given(st.integers(0, 2**32 - 1), st.integers(0, 1), st.integers(0, 1), st.floats(0.01, 1.0))
def test_expected_distortion_monotone_in_rates(seed, i, j, bump):
    rng = np.random.default_rng(seed)
    lib = SourceLibrary(rng.uniform(0.5, 2.0, 2))
    model = random_model(rng, 2, 2)
    rates = rng.uniform(0, 1, (2, 2))
    base = expected_distortion(lib, model, CachePlan(rates)).value
    more = rates.copy()
    more[i, j] += bump
    assert expected_distortion(lib, model, CachePlan(more)).value <= base + 1e-15
    sent = expected_distortion(lib, model, CachePlan(rates), lambda d: np.full(2, bump)).value
    assert sent <= base + 1e-15


def test_parse_mode():
    assert parse_mode("exact") == "exact"
    assert parse_mode("mc:500:7") == MonteCarlo(500, 7)
    with pytest.raises(ValueError):
        parse_mode("grid")
    with pytest.raises(ValueError):
        parse_mode("mc:1:0")
