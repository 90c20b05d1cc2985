import numpy as np
import pytest
from hypothesis import given, strategies as st

from dimm.fusion import (as_action_matrix, fuse_positions, fuse_with_weights, importance_weights,
                         transformation_matrices, uniform_weights, vector_weight_gap,
                         weights_from_transforms)
from oracles import softmax_reference

A = 5.0
actions = st.lists(st.floats(-A, A), min_size=9, max_size=9).map(np.array)
points = st.lists(st.floats(-100, 100), min_size=9, max_size=9).map(
    lambda v: np.array(v).reshape(3, 3))


def test_equal_scores_give_uniform():
    W = importance_weights(np.full(9, 2.5))
    assert np.allclose(W, 1 / 3, rtol=0, atol=1e-15)


def test_saturated_axis_example():
    W = importance_weights([5, -5, -5, 0, 0, 0, 0, 0, 0])
    ref = softmax_reference([5, -5, -5])
    assert np.allclose(W[0], ref, rtol=1e-14, atol=0)
    assert W[0] == pytest.approx([0.99991, 0.0000454, 0.0000454], rel=1e-3)


def test_shift_invariance_example():
    rng = np.random.default_rng(0)
    a = rng.uniform(-A, A, 9)
    b = a.copy()
    b[3:6] += 7.0
    assert np.abs(importance_weights(a) - importance_weights(b)).max() <= 1e-12


def test_action_shape_checked():
    with pytest.raises(ValueError):
        as_action_matrix(np.zeros(8))
    assert as_action_matrix(np.zeros((4, 9))).shape == (4, 3, 3)


def test_transforms_examples():
    T = transformation_matrices(uniform_weights())
    assert np.allclose(T, np.eye(3) / 3)
    W = np.zeros((3, 3))
    W[0, 0] = W[1, 1] = W[2, 2] = 1.0
    T = transformation_matrices(W)
    assert np.array_equal(T[0], np.diag([1.0, 0.0, 0.0]))
    p = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0], [100.0, 200.0, 300.0]])
    assert np.array_equal(fuse_positions(T, p), [1.0, 20.0, 300.0])


@given(actions)
def test_round_trip_and_identity(a):
    W = importance_weights(a)
    T = transformation_matrices(W)
    assert np.array_equal(weights_from_transforms(T), W)
    assert np.abs(T.sum(0) - np.eye(3)).max() <= 1e-9
    assert np.abs(W.sum(1) - 1).max() <= 1e-9 and (W >= 0).all()


@given(actions, points)
def test_fused_is_per_axis_convex(a, p):
    f = fuse_positions(transformation_matrices(importance_weights(a)), p)
    assert (f >= p.min(0) - 1e-9).all() and (f <= p.max(0) + 1e-9).all()
    assert np.allclose(fuse_with_weights(importance_weights(a), p), f, rtol=1e-12, atol=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3), actions)
def test_consensus(p0, a):
    p = np.tile(p0, (3, 1))
    f = fuse_positions(transformation_matrices(importance_weights(a)), p)
    assert np.allclose(f, p0, rtol=1e-12, atol=1e-12)


@given(actions, st.integers(0, 8), st.floats(1e-3, 1.0))
def test_weight_strictly_monotone(a, k, d):
    b = a.copy()
    b[k] += d
    i, j = divmod(k, 3)
    assert importance_weights(b)[i, j] > importance_weights(a)[i, j]


@given(actions, st.integers(0, 8))
def test_fusion_continuous_in_action(a, k):
    p = np.arange(9.0).reshape(3, 3) ** 2
    b = a.copy()
    b[k] += 1e-7
    fa = fuse_with_weights(importance_weights(a), p)
    fb = fuse_with_weights(importance_weights(b), p)
    assert np.abs(fa - fb).max() < 1e-4


def test_batched_weights_match_single():
    rng = np.random.default_rng(1)
    a = rng.uniform(-A, A, (7, 9))
    Wb = importance_weights(a)
    for i in range(7):
        assert np.array_equal(Wb[i], importance_weights(a[i]))


def test_gap_documented_instance():
    p = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    m, v = vector_weight_gap(p, np.zeros(3))
    assert m == 0.0
    # brute force over a fine simplex grid: the best shared vector is uniform
    g = np.linspace(0, 1, 301)
    best = min(np.linalg.norm(np.array([a, b, 1 - a - b]) @ p)
               for a in g for b in g if a + b <= 1)
    assert v > 0.4 and v == pytest.approx(best, abs=1e-3)
    assert v == pytest.approx(1 / np.sqrt(3), abs=1e-9)


def test_gap_vertex_reachable():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(3, 3))
    m, v = vector_weight_gap(p, p[1])
    assert m == 0.0 and v < 1e-9


def test_gap_1000_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        p = rng.normal(0, 10, (3, 3))
        t = rng.normal(0, 10, 3)
        m, v = vector_weight_gap(p, t, grid=60, refine_iters=200)
        assert m <= v + 1e-12
