import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_ot import data, metrics, reference
from sparse_ot.errors import ShapeError


def brute_force(a, b):
    n = len(a)
    C = 0.5 * ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    best = min(itertools.permutations(range(n)), key=lambda p: C[np.arange(n), list(p)].sum())
    return C[np.arange(n), list(best)].mean()


@pytest.mark.parametrize("n", [2, 3, 6, 7])
def test_assignment_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(3):
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        cost, perm = reference.exact_assignment_w2(a, b)
        assert cost == pytest.approx(brute_force(a, b), rel=1e-12, abs=1e-14)
        assert sorted(perm) == list(range(n))


def test_assignment_identity_and_1d_monotone():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 3))
    cost, perm = reference.exact_assignment_w2(a, a)
    assert cost == 0.0 and np.array_equal(perm, np.arange(20))
    x, y = rng.normal(size=(15, 1)), rng.normal(size=(15, 1))
    _, perm = reference.exact_assignment_w2(x, y)
    order = np.argsort(x[:, 0])
    assert np.all(np.diff(y[perm[order], 0]) >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50), st.floats(-50, 50))
def test_assignment_translation_invariant(seed, tx, ty):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    t = np.array([tx, ty])
    c0, _ = reference.exact_assignment_w2(a, b)
    c1, _ = reference.exact_assignment_w2(a + t, b + t)
    assert c1 == pytest.approx(c0, rel=1e-9, abs=1e-9)


def test_assignment_errors():
    with pytest.raises(ShapeError):
        reference.exact_assignment_w2(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        reference.exact_assignment_w2(np.zeros((513, 1)), np.zeros((513, 1)))


def test_sinkhorn_single_point():
    cp = reference.sinkhorn(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]), 1e-3)
    assert cp.matrix.shape == (1, 1) and cp.matrix[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_sinkhorn_marginals_random_32():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.normal(size=(32, 2)), rng.normal(size=(32, 2)) + 1
        cp = reference.sinkhorn(a, b, 1e-2)
        assert cp.marginal_residual() <= 1e-6
        assert np.all(cp.matrix >= 0)


def test_sinkhorn_near_exact_at_small_epsilon():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(32, 2)), rng.normal(size=(32, 2)) + [2.0, 0.0]
    exact, _ = reference.exact_assignment_w2(a, b)
    cp = reference.sinkhorn(a, b, 1e-3, max_iters=50_000)
    C = 0.5 * ((a[:, None] - b[None]) ** 2).sum(-1)
    assert cp.marginal_residual() <= 1e-6
    assert abs(cp.cost(C) - exact) <= 0.02 * exact


def test_sinkhorn_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        reference.sinkhorn(np.zeros((2, 1)), np.zeros((2, 1)), 0.0)


def test_gibbs_weights_are_probabilities():
    rng = np.random.default_rng(3)
    x, ys = rng.normal(size=(10, 3)), rng.normal(size=(25, 3))
    p = reference.gibbs_weights(x, ys, rng.normal(size=25), 0.5, 0.1)
    assert np.all(p >= 0)
    assert np.abs(p.sum(axis=1) - 1).max() <= 1e-12


def test_elastic_map_single_atom_lambda_zero():
    y = np.array([[2.0, -1.0]])
    x = np.random.default_rng(0).normal(size=(5, 2))
    for eps in (1e-3, 1.0):
        T, _ = reference.fit_elastic_l1(x, y, 0.0, eps)
        assert np.allclose(T, np.repeat(y, 5, axis=0), atol=1e-12)


def test_elastic_map_lambda_zero_is_barycentric():
    rng = np.random.default_rng(4)
    x, ys = rng.normal(size=(8, 2)), rng.normal(size=(12, 2))
    T, cp = reference.fit_elastic_l1(x, ys, 0.0, 0.5)
    P = cp.matrix / cp.matrix.sum(axis=1, keepdims=True)
    assert np.allclose(T, P @ ys, atol=1e-8)


def test_elastic_map_axis_aligned_perturbation_is_sparse():
    rng = np.random.default_rng(5)
    x = np.abs(rng.normal(size=(64, 2)))
    ys = np.abs(rng.normal(size=(64, 2)))
    ys[:, 0] += 4.0
    T, _ = reference.fit_elastic_l1(x, ys, 1.0, 1e-2)
    disp = T - x
    assert np.abs(disp[:, 1]).mean() < 1e-2
    assert np.abs(disp[:, 0]).mean() > 1.0


def test_elastic_map_needs_matching_duals():
    rng = np.random.default_rng(6)
    x, ys = rng.normal(size=(4, 2)), rng.normal(size=(5, 2))
    _, cp = reference.fit_elastic_l1(x, ys, 0.1, 0.1)
    with pytest.raises(ShapeError):
        reference.elastic_map_l1(x, ys[:4], 0.1, 0.1, cp)
    with pytest.raises(ValueError):
        reference.elastic_map_l1(x, ys, 0.1, 0.1, None)


def test_attainability_instance():
    ctrl, pert, truth = data.gen_synthetic_perturbation(data.SyntheticSpec(n=64, d=10, k=2, seed=0))
    T, _ = reference.fit_elastic_l1(ctrl, pert, 1.0, 1e-2)
    dim = metrics.displacement_dim(T - ctrl)
    assert 2 <= dim <= 3
    assert metrics.gene_overlap(T - ctrl, truth) == 1.0
