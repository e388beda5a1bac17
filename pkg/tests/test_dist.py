import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sprinterlab.dist import (
    AllZero,
    CategoricalDist,
    RngStream,
    VocabMismatch,
    empirical,
    entropy,
    normalize,
    residual_dist,
    sample,
    sample_many,
    sprinter_mixture,
    tv_distance,
)

weights = st.lists(st.floats(0.0, 10.0), min_size=1, max_size=16).filter(lambda w: sum(w) > 1e-3)


def dist_pair(V):
    w = st.lists(st.floats(0.0, 10.0), min_size=V, max_size=V).filter(lambda w: sum(w) > 1e-3)
    return st.tuples(w, w).map(lambda t: (normalize(t[0]), normalize(t[1])))


pairs = st.integers(1, 12).flatmap(dist_pair)


@pytest.mark.parametrize("w, expected", [
    ([2, 2], [0.5, 0.5]),
    ([0.4, 0], [1.0, 0.0]),
    ([1, 2, 1], [0.25, 0.5, 0.25]),
])
def test_normalize(w, expected):
    assert np.allclose(normalize(w).probs, expected)


@pytest.mark.parametrize("bad", [[0, 0], [-1, 2], [float("nan"), 1]])
def test_normalize_rejects(bad):
    with pytest.raises((AllZero, ValueError)):
        normalize(bad)


def test_construction_tolerance():
    assert math.isclose(CategoricalDist([0.5, 0.5 + 5e-10]).probs.sum(), 1.0, abs_tol=1e-15)
    with pytest.raises(ValueError):
        CategoricalDist([0.5, 0.6])
    with pytest.raises(ValueError):
        CategoricalDist([])


def test_sample_degenerate():
    rng = RngStream(0)
    assert all(sample(CategoricalDist([1.0, 0.0]), rng) == 0 for _ in range(1000))
    assert (sample_many(CategoricalDist([0.0, 1.0, 0.0]), rng, 10_000) == 1).all()


def test_sample_fair_coin():
    x = sample_many(CategoricalDist([0.5, 0.5]), RngStream(1), 1_000_000)
    assert 0.497 <= (x == 0).mean() <= 0.503


def test_sample_reproducible():
    d = CategoricalDist([0.2, 0.8])
    draws = []
    for _ in range(2):
        rng = RngStream(42)
        draws.append([sample(d, rng) for _ in range(50)])
    assert draws[0] == draws[1]


def test_scalar_and_vector_samplers_agree():
    d = CategoricalDist([0.1, 0.0, 0.3, 0.6])
    r1, r2 = RngStream(5), RngStream(5)
    assert [sample(d, r1) for _ in range(500)] == sample_many(d, r2, 500).tolist()


def test_streams_differ():
    a = RngStream(0, 1).uniform(1000)
    b = RngStream(0, 2).uniform(1000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.15


@pytest.mark.parametrize("p, q, expected", [
    ([0.3, 0.7], [0.3, 0.7], 0.0),
    ([1, 0], [0, 1], 1.0),
    ([0.6, 0.4], [0.2, 0.8], 0.4),
])
def test_tv(p, q, expected):
    assert math.isclose(tv_distance(CategoricalDist(p), CategoricalDist(q)), expected, abs_tol=1e-12)


def test_tv_vocab_mismatch():
    with pytest.raises(VocabMismatch):
        tv_distance(CategoricalDist([1.0]), CategoricalDist([0.5, 0.5]))


@pytest.mark.parametrize("p, q, expected", [
    ([0.6, 0.4], [0.2, 0.8], [1.0, 0.0]),
    ([0.5, 0.5], [0.5, 0.5], [0.5, 0.5]),
    ([0.5, 0.3, 0.2], [0.1, 0.5, 0.4], [1.0, 0.0, 0.0]),
])
def test_residual(p, q, expected):
    assert np.allclose(residual_dist(CategoricalDist(p), CategoricalDist(q)).probs, expected)


@pytest.mark.parametrize("eta, expected", [(0.0, [0.6, 0.4]), (1.0, [0.2, 0.8]), (0.2, [0.52, 0.48])])
def test_mixture(eta, expected):
    assert np.allclose(sprinter_mixture(CategoricalDist([0.6, 0.4]), CategoricalDist([0.2, 0.8]), eta).probs,
                       expected, atol=1e-12)


def test_mixture_rejects_bad_eta():
    with pytest.raises(ValueError):
        sprinter_mixture(CategoricalDist([1.0]), CategoricalDist([1.0]), 1.5)


@given(pairs)
def test_tv_is_a_metric(pq):
    p, q = pq
    assert math.isclose(tv_distance(p, q), tv_distance(q, p), abs_tol=1e-15)
    assert tv_distance(p, p) == 0.0
    assert 0.0 <= tv_distance(p, q) <= 1.0


@given(st.integers(1, 8).flatmap(lambda V: st.tuples(dist_pair(V), dist_pair(V))))
def test_triangle_inequality(pairs2):
    (p, q), (r, _) = pairs2
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12


@given(pairs)
def test_mixture_tv_scales_with_eta(pq):
    p, q = pq
    d = tv_distance(p, q)
    for eta in np.linspace(0, 1, 11):
        assert abs(tv_distance(p, sprinter_mixture(p, q, eta)) - eta * d) <= 1e-12


@given(pairs)
def test_residual_support(pq):
    p, q = pq
    r = residual_dist(p, q)
    assert abs(r.probs.sum() - 1.0) <= 1e-9
    if np.any(p.probs - q.probs > 0):
        assert np.all(r.probs[p.probs <= q.probs] == 0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_sampler_matches_dist(V, seed):
    d = CategoricalDist(np.random.default_rng(seed).dirichlet(np.ones(V)))
    emp = empirical(sample_many(d, RngStream(seed), 1_000_000), V)
    assert tv_distance(d, emp) <= 0.005


def test_entropy():
    assert math.isclose(entropy(CategoricalDist([0.5, 0.5])), math.log(2))
    assert entropy(CategoricalDist([1.0, 0.0])) == 0.0
