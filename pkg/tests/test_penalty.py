import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparse_ot import penalty
from sparse_ot.penalty import Penalty, prox_l1

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 8), elements=finite)
penalties = st.one_of(
    st.just(Penalty("l1")),
    st.floats(0.05, 200).map(lambda g: Penalty("stvs", gamma=g)),
    st.floats(0.05, 20).map(lambda x: Penalty("sl0", xi=x)),
)


# independent scalar recomputations
def l1_ref(z):
    return sum(abs(v) for v in z)


def stvs_ref(z, g):
    out = 0.0
    for v in z:
        s = math.asinh(abs(v) / (2 * g))
        out += g * g * (s + 0.5 - 0.5 * math.exp(-2 * s))
    return out


def sl0_ref(z, xi):
    return sum(1 - math.exp(-v * v / (2 * xi * xi)) for v in z)


def test_examples():
    assert Penalty("l1").value(np.array([3.0, -4.0, 0.0])) == 7.0
    assert Penalty("stvs", gamma=3.7).value(np.zeros(4)) == 0.0
    assert Penalty("sl0", xi=1.0).value(np.array([1.0, 0.0])) == pytest.approx(0.393469340287, abs=1e-12)
    assert np.array_equal(Penalty("l1").grad(np.array([2.0, -2.0, 0.0])), [1.0, -1.0, 0.0])
    assert np.array_equal(Penalty("sl0", xi=0.3).grad(np.zeros(3)), np.zeros(3))


@given(vectors, st.floats(0.05, 200), st.floats(0.05, 20))
def test_values_match_recomputation(z, gamma, xi):
    assert Penalty("l1").value(z) == pytest.approx(l1_ref(z), rel=1e-12, abs=1e-12)
    assert Penalty("stvs", gamma=gamma).value(z) == pytest.approx(stvs_ref(z, gamma), rel=1e-9, abs=1e-9)
    assert Penalty("sl0", xi=xi).value(z) == pytest.approx(sl0_ref(z, xi), rel=1e-9, abs=1e-12)


@settings(max_examples=200)
@given(vectors, penalties)
def test_grad_matches_finite_differences(z, p):
    z = np.where(np.abs(z) < 1e-3, 1e-3 + np.abs(z), z)  # away from the l1 kink
    g = p.grad(z)
    # the penalties are separable, so differentiate one coordinate at a time
    for zi, gi in zip(z, g):
        h = 1e-6 * max(1.0, abs(zi))
        fd = (p.value(np.array([zi + h])) - p.value(np.array([zi - h]))) / (2 * h)
        assert abs(gi - fd) <= 1e-6 * max(1.0, abs(fd))


@given(penalties, st.integers(1, 6))
def test_zero_maps_to_zero(p, d):
    assert p.value(np.zeros(d)) == 0.0


@given(vectors, penalties, st.data())
def test_even_in_each_coordinate(z, p, data):
    flips = data.draw(arrays(np.float64, len(z), elements=st.sampled_from([-1.0, 1.0])))
    assert p.value(z * flips) == p.value(z)
    assert p.value(z) >= 0.0


@given(vectors, penalties, st.floats(1.0, 10.0))
def test_monotone_scaling(z, p, c):
    assert p.value(c * z) >= p.value(z) - 1e-12 * max(1.0, p.value(z))


@given(vectors, st.floats(0.05, 20))
def test_sl0_bounds(z, xi):
    v = Penalty("sl0", xi=xi).value(z)
    assert 0.0 <= v <= len(z)


@pytest.mark.parametrize("xi", [0.1, 1.0, 7.0])
def test_sl0_approaches_count(xi):
    d = 12
    assert Penalty("sl0", xi=xi).value(np.full(d, 10 * xi)) >= d - 1e-3


def test_batch_reduces_last_axis():
    z = np.array([[1.0, -2.0], [0.0, 3.0]])
    assert np.array_equal(Penalty("l1").value(z), [3.0, 3.0])
    assert penalty.grad(Penalty("l1"), z).shape == z.shape


def test_non_finite_rejected():
    for kind in penalty.KINDS:
        with pytest.raises(ValueError):
            Penalty(kind).value(np.array([1.0, np.nan]))
        with pytest.raises(ValueError):
            Penalty(kind).grad(np.array([np.inf]))


def test_parameter_validation_and_config():
    with pytest.raises(ValueError):
        Penalty("stvs", gamma=0.0)
    with pytest.raises(ValueError):
        Penalty("sl0", xi=-1.0)
    with pytest.raises(ValueError):
        Penalty("l2")
    assert Penalty.from_config({"kind": "stvs", "gamma": 10}) == Penalty("stvs", gamma=10.0)
    assert Penalty.from_config("sl0") == Penalty("sl0")
    assert Penalty.from_config(Penalty("sl0", xi=2.0).to_config()) == Penalty("sl0", xi=2.0)
    with pytest.raises(KeyError):
        Penalty.from_config({"kind": "l1", "alpha": 1})


def test_defaults():
    p = Penalty()
    assert (p.kind, p.gamma, p.xi) == ("l1", 100.0, 1.0)


def test_prox_examples():
    assert np.array_equal(prox_l1(np.array([3.0, -0.5]), 1.0), [2.0, 0.0])
    v = np.array([0.3, -7.0, 0.0])
    assert np.array_equal(prox_l1(v, 0.0), v)
    with pytest.raises(ValueError):
        prox_l1(v, -0.1)


@settings(max_examples=50)
@given(arrays(np.float64, st.integers(1, 4), elements=st.floats(-5, 5)), st.floats(0, 3))
def test_prox_matches_grid_search(v, t):
    grid = np.linspace(-8, 8, 160001)  # spacing 1e-4
    for vi, pi in zip(v, prox_l1(v, t)):
        obj = 0.5 * (grid - vi) ** 2 + t * np.abs(grid)
        assert abs(grid[np.argmin(obj)] - pi) <= 1e-4
