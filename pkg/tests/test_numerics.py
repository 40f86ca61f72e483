import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from detcore.numerics import (
    central_diff_grad,
    l2_normalize,
    l2_normalize_jvp,
    logsumexp,
    relative_error,
    softmax,
)
from oracles import naive_logsumexp

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_logsumexp_fixtures():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([1000.0, 1000.0]) == 1000.0 + math.log(2)
    with pytest.raises(ValueError, match="empty vector"):
        logsumexp([])


def test_logsumexp_matches_naive_small_magnitudes():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.uniform(-5, 5, 7)
        assert abs(logsumexp(v) - naive_logsumexp(v)) < 1e-12


@given(arrays(np.float64, st.integers(1, 20), elements=finite), finite)
def test_logsumexp_shift(v, c):
    assert logsumexp(v + c) == pytest.approx(logsumexp(v) + c, abs=1e-10)


def test_softmax_fixtures():
    np.testing.assert_allclose(softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    assert softmax([4.2]).tolist() == [1.0]
    v = np.array([1.0, 2.0, 3.0])
    expected = [math.exp(x - naive_logsumexp(v)) for x in v]
    np.testing.assert_allclose(softmax(v), expected, atol=1e-15)
    with pytest.raises(ValueError):
        softmax([])


def test_softmax_sums_to_one_many_inputs():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        p = softmax(rng.uniform(-50, 50, rng.integers(1, 12)))
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) <= 1e-12


def test_l2_normalize():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.raises(ValueError, match="degenerate vector"):
        l2_normalize([0.0, 0.0], eps=1e-12)


@settings(max_examples=200)
@given(arrays(np.float64, st.integers(1, 16), elements=st.floats(-1e3, 1e3)))
def test_l2_normalize_idempotent(v):
    if np.linalg.norm(v) <= 1e-6:
        return
    once = l2_normalize(v)
    assert abs(np.linalg.norm(once) - 1) <= 1e-12
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)


def test_normalize_jvp_matches_finite_differences():
    rng = np.random.default_rng(1)
    v = rng.normal(size=5)
    g = rng.normal(size=5)
    numeric = central_diff_grad(lambda x: float(g @ (x / np.linalg.norm(x))), v, 1e-6)
    assert relative_error(l2_normalize_jvp(v, g), numeric) < 1e-8


def test_central_diff_fixtures():
    g = central_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-4)
    assert abs(g[0] - 6.0) < 1e-6
    np.testing.assert_array_equal(central_diff_grad(lambda x: 2.5, np.ones(4)), np.zeros(4))
    with pytest.raises(ValueError):
        central_diff_grad(lambda x: float("nan"), np.ones(2))
    with pytest.raises(ValueError):
        central_diff_grad(lambda x: 0.0, np.ones(2), h=0.0)


def test_relative_error_metric():
    assert relative_error([0.0], [1e-7]) == pytest.approx(1e-7)
    assert relative_error([100.0], [101.0]) == pytest.approx(1 / 101)
