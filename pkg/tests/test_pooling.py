import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hierpool.pooling import PoolingFunction, compute_weights, pool, pool_single

DERIVED = [PoolingFunction.MAX, PoolingFunction.AVERAGE,
           PoolingFunction.LINEAR_SOFTMAX, PoolingFunction.EXP_SOFTMAX]

scores = st.integers(1, 12).flatmap(
    lambda n: arrays(np.float64, (n, 2), elements=st.floats(0, 1)))


def col(*values):
    return np.array(values, dtype=float)[:, None]


def test_average_weights():
    w = compute_weights(np.full((4, 1), 0.3), "average")
    np.testing.assert_array_equal(w, np.full((4, 1), 0.25))


def test_max_weights_one_hot():
    np.testing.assert_array_equal(compute_weights(col(0.1, 0.9, 0.3), "max"), col(0, 1, 0))


def test_max_ties_take_lowest_index():
    np.testing.assert_array_equal(compute_weights(col(0.7, 0.2, 0.7), "max"), col(1, 0, 0))


def test_exp_weights():
    w = compute_weights(col(0.0, 1.0), "exp")
    np.testing.assert_allclose(w.ravel(), [1.0, math.e], rtol=0, atol=1e-15)


def test_attention_weights_are_not_derivable():
    with pytest.raises(ValueError):
        compute_weights(col(0.5, 0.5), "attention")


def test_linear_softmax_value():
    assert pool(col(0.2, 0.4, 0.6, 0.8), "linear")[0] == pytest.approx(1.2 / 2.0, abs=1e-15)


def test_exp_softmax_value():
    assert pool(col(0.0, 1.0), "exp")[0] == pytest.approx(math.e / (1 + math.e), abs=1e-15)


def test_zero_denominator_gives_zero():
    assert pool(np.zeros((5, 1)), "linear")[0] == 0.0


@pytest.mark.parametrize("bad", [np.ones((3, 1)) * 1.5, -np.ones((3, 1))])
def test_scores_out_of_range_rejected(bad):
    with pytest.raises(ValueError):
        pool(bad, "average")


def test_shape_mismatch_and_negative_weight():
    with pytest.raises(ValueError):
        pool_single(np.ones((3, 1)) * 0.5, np.ones((4, 1)))
    with pytest.raises(ValueError):
        pool_single(np.ones((3, 1)) * 0.5, -np.ones((3, 1)))


def test_attention_uses_given_weights():
    x = col(0.2, 0.8)
    assert pool(x, "attention", weights=col(3.0, 1.0))[0] == pytest.approx((0.6 + 0.8) / 4.0)


def test_batch_axes():
    x = np.random.default_rng(0).uniform(size=(3, 7, 2))
    y = pool(x, "linear")
    assert y.shape == (3, 2)
    np.testing.assert_allclose(y[1], pool(x[1], "linear"))


@pytest.mark.parametrize("fn", DERIVED)
@given(c=st.floats(0, 1), n=st.integers(1, 30))
def test_constant_scores(fn, c, n):
    assert pool(np.full((n, 1), c), fn)[0] == pytest.approx(c, abs=1e-12)


@pytest.mark.parametrize("fn", DERIVED)
@given(x=scores)
def test_bounded_by_min_and_max(fn, x):
    y = pool(x, fn)
    assert np.all(y >= x.min(axis=0) - 1e-12)
    assert np.all(y <= x.max(axis=0) + 1e-12)


@given(x=scores)
def test_orderings_that_do_hold(x):
    avg = pool(x, "average")
    assert np.all(avg <= pool(x, "max") + 1e-12)
    assert np.all(pool(x, "linear") >= avg - 1e-12)


@given(x=scores, seed=st.integers(0, 2 ** 32 - 1))
def test_max_is_exact(x, seed):
    np.testing.assert_array_equal(pool(x, "max"), x.max(axis=0))


@settings(max_examples=50)
@pytest.mark.parametrize("fn", DERIVED)
@given(x=scores, seed=st.integers(0, 2 ** 32 - 1))
def test_permutation_invariance(fn, x, seed):
    perm = np.random.default_rng(seed).permutation(x.shape[0])
    np.testing.assert_allclose(pool(x[perm], fn), pool(x, fn), rtol=0, atol=1e-12)
