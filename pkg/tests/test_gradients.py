import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierpool.gradients import (backward, closed_form_gradient, finite_difference_check, grad_hierarchical,
                                grad_single, loss, loss_grad, pool_backward)
from hierpool.hierarchical import pool_with
from hierpool.pooling import compute_weights

X4 = np.array([[0.2], [0.4], [0.6], [0.8]])
FNS = ["average", "linear", "exp", "attention", "max"]


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e)[idx[-1]] - f(x - e)[idx[-1]]) / (2 * h)
    return g


def draw(rng, n, c=1):
    return rng.uniform(0.05, 0.95, (n, c)), rng.uniform(0.05, 0.95, (n, c))


def test_loss_values():
    assert loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)
    assert loss([0.5], [0]) == pytest.approx(math.log(2), abs=1e-12)
    assert loss([0.9], [1]) == pytest.approx(0.105361, abs=1e-6)
    assert loss([0.9, 0.5], [1, 0]) == pytest.approx(-math.log(0.9) + math.log(2))


def test_loss_grad_values():
    np.testing.assert_allclose(loss_grad([0.5, 0.5], [1, 0]), [-2.0, 2.0])
    assert loss_grad([0.0], [1])[0] == pytest.approx(-1e7)
    assert np.isfinite(loss([0.0, 1.0], [1, 0]))


def test_loss_grad_matches_difference():
    y = np.array([0.3, 0.7])
    t = np.array([1.0, 0.0])
    h = 1e-6
    fd = [(loss(y + h * e, t) - loss(y - h * e, t)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(loss_grad(y, t), fd, rtol=1e-7)


def test_linear_flat_gradient_values():
    g = grad_single(X4, fn="linear").d_y_d_x.ravel()
    np.testing.assert_allclose(g, [-0.1, 0.1, 0.3, 0.5], rtol=0, atol=1e-12)
    fd = central_diff(lambda x: pool_with(x, "linear"), X4)
    np.testing.assert_allclose(g, fd.ravel(), rtol=0, atol=1e-8)


def test_average_and_max_flat():
    np.testing.assert_allclose(grad_single(X4, fn="average").d_y_d_x, np.full((4, 1), 0.25))
    x = np.array([[0.1], [0.9], [0.3]])
    np.testing.assert_array_equal(grad_single(x, fn="max").d_y_d_x, [[0], [1], [0]])


@pytest.mark.parametrize("plan", [(5,), (5, 5), (5, 5, 5), (25,), (1,)])
def test_average_and_max_under_structure(plan, rng):
    x, _ = draw(rng, 125, 2)
    np.testing.assert_allclose(grad_hierarchical(x, fn="average", plan=plan).d_y_d_x, 1 / 125, rtol=1e-12)
    np.testing.assert_array_equal(grad_hierarchical(x, fn="max", plan=plan).d_y_d_x,
                                  compute_weights(x, "max"))


def test_linear_plan_two_against_differences():
    g = grad_hierarchical(X4, fn="linear", plan=[2]).d_y_d_x
    fd = central_diff(lambda x: pool_with(x, "linear", [2]), X4, h=1e-5)
    assert np.max(np.abs(g - fd) / np.abs(g)) <= 1e-6


@pytest.mark.parametrize("fn", FNS)
@pytest.mark.parametrize("plan", [(5,), (25,), (1,), (125,)])
def test_closed_forms_match_composition(fn, plan, rng):
    x, w = draw(rng, 125, 3)
    closed = closed_form_gradient(x, fn, plan, w if fn == "attention" else None)
    d_x, d_w = pool_backward(x, fn, plan, weights=w if fn == "attention" else None)
    np.testing.assert_allclose(closed.d_y_d_x, d_x, rtol=1e-10, atol=1e-15)
    if fn == "attention":
        np.testing.assert_allclose(closed.d_y_d_w, d_w, rtol=1e-10, atol=1e-15)


@pytest.mark.parametrize("fn", FNS)
def test_empty_plan_equals_single(fn, rng):
    x, w = draw(rng, 30, 2)
    a, b = grad_hierarchical(x, w, fn, ()), grad_single(x, w, fn)
    np.testing.assert_array_equal(a.d_y_d_x, b.d_y_d_x)


@pytest.mark.parametrize("fn", FNS)
def test_unit_segments_equal_single(fn, rng):
    x, w = draw(rng, 30, 2)
    a, b = grad_hierarchical(x, w, fn, (1,)), grad_single(x, w, fn)
    assert np.max(np.abs(a.d_y_d_x - b.d_y_d_x)) <= 1e-12
    if fn == "attention":
        assert np.max(np.abs(a.d_y_d_w - b.d_y_d_w)) <= 1e-12


def test_flat_exp_and_attention_against_differences(rng):
    x, w = draw(rng, 12)
    g = grad_single(x, fn="exp").d_y_d_x
    np.testing.assert_allclose(g, central_diff(lambda v: pool_with(v, "exp"), x), rtol=1e-7)
    ga = grad_single(x, w, "attention")
    np.testing.assert_allclose(ga.d_y_d_x, central_diff(lambda v: pool_with(v, "attention", weights=w), x),
                               rtol=1e-7)
    np.testing.assert_allclose(ga.d_y_d_w, central_diff(lambda v: pool_with(x, "attention", weights=v), w),
                               rtol=1e-6, atol=1e-12)


def test_segment_prediction_enters_hierarchical_gradient():
    x = np.array([[0.3], [0.5], [0.7], [0.2], [0.6], [0.4]])
    moved = x.copy()
    moved[1] = 0.8  # same segment as frame 0 under plan [3]
    other = x.copy()
    other[4] = 0.8  # different segment
    h = lambda v: grad_hierarchical(v, fn="linear", plan=(3,)).d_y_d_x[0, 0]
    flat = lambda v: grad_single(v, fn="linear").d_y_d_x[0, 0]
    assert h(moved) != pytest.approx(h(x), abs=1e-6)
    # flat gradient of frame 0 is (2 x_0 - y) / sum(x): only y and sum(x) carry the change
    for v in (moved, other):
        y = (v ** 2).sum() / v.sum()
        assert flat(v) == pytest.approx((2 * v[0, 0] - y) / v.sum(), rel=1e-14)
    # Same y and sum(x), different segment mean: flat gradient unchanged, hierarchical not
    a = np.array([[0.3], [0.5], [0.7], [0.4]])
    b = np.array([[0.3], [0.7], [0.5], [0.4]])
    assert flat(a) == pytest.approx(flat(b), abs=1e-15)
    h2 = lambda v: grad_hierarchical(v, fn="linear", plan=(2,)).d_y_d_x[0, 0]
    assert abs(h2(a) - h2(b)) > 1e-3


@given(seed=st.integers(0, 2 ** 32 - 1), plan=st.sampled_from([(), (5,), (5, 5), (5, 5, 5)]))
def test_average_sum_rule(seed, plan):
    x = np.random.default_rng(seed).uniform(size=(125, 2))
    assert np.sum(grad_hierarchical(x, fn="average", plan=plan).d_y_d_x, axis=0) == pytest.approx([1, 1], abs=1e-12)


def test_zero_weight_segment_has_zero_gradient():
    x = np.array([[0.0], [0.0], [0.5], [0.7]])
    g = grad_hierarchical(x, fn="linear", plan=(2,)).d_y_d_x
    assert g[0, 0] == 0.0 and g[1, 0] == 0.0
    assert np.all(np.isfinite(g))


def test_zero_weights_everywhere():
    g = grad_single(np.zeros((4, 1)), fn="linear").d_y_d_x
    np.testing.assert_array_equal(g, 0.0)


def test_backward_is_linear_in_upstream(rng):
    x, w = draw(rng, 25, 3)
    up = np.array([0.5, -2.0, 3.0])
    a = backward(x, w, (5,), up)
    b = backward(x, w, (5,), np.ones(3))
    np.testing.assert_allclose(a[0], b[0] * up, rtol=1e-12)


def test_average_check_error_tiny(rng):
    x, _ = draw(rng, 125)
    assert finite_difference_check(x, fn="average", plan=(5, 5, 5)) <= 1e-10


def test_linear_flat_check_many_draws(rng):
    x = rng.uniform(0.05, 0.95, (1000, 20, 1))
    assert finite_difference_check(x, fn="linear") <= 1e-6


def test_attention_hierarchical_check(rng):
    x = rng.uniform(0.05, 0.95, (200, 20, 2))
    w = rng.uniform(0.05, 0.95, (200, 20, 2))
    assert finite_difference_check(x, w, "attention", (5, 2)) <= 1e-6


def test_max_check_skips_argmax_crossings():
    x = np.array([[0.5], [0.5 + 5e-6], [0.1]])
    assert finite_difference_check(x, fn="max", step=1e-5) == 0.0


@pytest.mark.parametrize("fn", ["linear", "exp", "attention"])
def test_mean_weight_rule_gradients(fn, rng):
    x, w = draw(rng, 50, 2)
    assert finite_difference_check(x, w, fn, (5, 2), weight_rule="mean") <= 1e-5


def test_single_clip_and_batch_agree(rng):
    x = rng.uniform(0.05, 0.95, (3, 25, 2))
    g = grad_hierarchical(x, fn="exp", plan=(5,)).d_y_d_x
    np.testing.assert_allclose(g[1], grad_hierarchical(x[1], fn="exp", plan=(5,)).d_y_d_x, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), fn=st.sampled_from(["linear", "exp", "attention"]),
       plan=st.sampled_from([(), (2,), (5,), (2, 5), (5, 2)]))
def test_gradient_property(seed, fn, plan):
    x, w = draw(np.random.default_rng(seed), 20, 2)
    assert finite_difference_check(x, w, fn, plan) <= 1e-5
