"""
Analytic backward passes for flat and hierarchical pooling, the clip-level
binary cross-entropy, and a central finite-difference checker.

Within one aggregation stage, with S = sum of member weights,

    d x_seg / d x_i = w_i / S
    d x_seg / d w_i = (x_i - x_seg) / S
    d w_seg / d w_i = (2 w_i - w_seg) / S

and the clip average contributes d y / d x_seg = w_seg / sum(w_seg) and
d y / d w_seg = (x_seg - y) / sum(w_seg). Multi-stage plans chain these
stage by stage in reverse. Score-derived weights add dw_i/dx_i on top.
The one-stage closed forms per pooling function are kept separately in
`closed_form_gradient` and must agree with the composed path.
"""

from dataclasses import dataclass

import numpy as np

from .hierarchical import forward_stages, validate_plan
from .pooling import PoolingFunction, compute_weights, resolve_weights, weight_derivative

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class PoolingGradients:
    d_y_d_x: np.ndarray
    d_y_d_w: np.ndarray | None = None


def clamp_probability(y, eps=CLAMP_EPS):
    return np.clip(y, eps, 1.0 - eps)


def loss(y, t, eps=CLAMP_EPS):
    """Binary cross-entropy summed over every class (and clip)."""
    y = clamp_probability(np.asarray(y, dtype=float), eps)
    t = np.asarray(t, dtype=float)
    return float(np.sum(-t * np.log(y) - (1.0 - t) * np.log1p(-y)))


def loss_grad(y, t, eps=CLAMP_EPS):
    """dL/dy = 1/(1-y) for negatives, -1/y for positives, at the clamped y."""
    y = clamp_probability(np.asarray(y, dtype=float), eps)
    t = np.asarray(t, dtype=float)
    return -t / y + (1.0 - t) / (1.0 - y)


def _segments(a, m):
    return a.reshape(a.shape[:-2] + (a.shape[-2] // m, m, a.shape[-1]))


def _stage_vjp(x, w, m, g_pred, g_weight, weight_rule):
    """Pull gradients on segment (prediction, weight) back onto member (x, w)."""
    xs = _segments(x, m)
    ws = _segments(w, m)
    den = ws.sum(axis=-2, keepdims=True)
    ok = den > 0
    safe = np.where(ok, den, 1.0)
    pred = (ws * xs).sum(axis=-2, keepdims=True) / safe
    gp = np.expand_dims(g_pred, -2)
    gw = np.expand_dims(g_weight, -2)
    g_x = gp * ws / safe
    g_w = gp * (xs - pred) / safe
    if weight_rule == "self":
        seg_w = (ws * ws).sum(axis=-2, keepdims=True) / safe
        g_w = g_w + gw * (2.0 * ws - seg_w) / safe
    else:
        g_w = g_w + gw / m
    g_x = np.where(ok, g_x, 0.0)
    g_w = np.where(ok, g_w, 0.0)
    return g_x.reshape(x.shape), g_w.reshape(w.shape)


def backward(x, w, plan, grad_y, weight_rule="self"):
    """
    Vector-Jacobian product of hierarchical pooling.

    Parameters
    ----------
    x, w: arrays, shape (..., N, C)
        Validated scores and weights.
    plan: tuple of int
        Validated stage plan.
    grad_y: array, shape (..., C)
        Upstream gradient on the clip probability.

    Returns
    -------
    g_x, g_w: arrays, shape (..., N, C)
        Partial gradients with the weights held independent of the scores.
    """
    levels, _ = forward_stages(x, w, plan, weight_rule)
    xl, wl = levels[-1]
    # closing average: a single segment spanning everything left
    g_x, g_w = _stage_vjp(xl, wl, xl.shape[-2], grad_y[..., None, :],
                          np.zeros_like(grad_y)[..., None, :], weight_rule)
    for (xs, ws), m in zip(reversed(levels[:-1]), reversed(plan)):
        g_x, g_w = _stage_vjp(xs, ws, m, g_x, g_w, weight_rule)
    return g_x, g_w


def pool_backward(scores, fn, plan=(), grad_y=None, weights=None, weight_rule="self"):
    """
    Gradients of sum(grad_y * y) for pooling function `fn`.

    Returns (d_x, d_w). For score-derived weights `d_x` already includes the
    path through w(x); `d_w` is the partial with respect to the weights and
    only carries meaning for attention.
    """
    fn = PoolingFunction.parse(fn)
    x, w = resolve_weights(scores, fn, weights)
    factors = validate_plan(plan, x.shape[-2])
    if grad_y is None:
        grad_y = np.ones(x.shape[:-2] + x.shape[-1:], dtype=x.dtype)
    g_x, g_w = backward(x, w, factors, np.asarray(grad_y, dtype=x.dtype), weight_rule)
    return g_x + g_w * weight_derivative(x, fn), g_w


def _flat_closed_form(x, w, fn):
    n = x.shape[-2]
    if fn is PoolingFunction.AVERAGE:
        return np.full_like(x, 1.0 / n), None
    if fn is PoolingFunction.MAX:
        return w.copy(), None
    if fn is PoolingFunction.LINEAR_SOFTMAX:
        total = x.sum(axis=-2, keepdims=True)
        ok = total > 0
        y = np.where(ok, (x * x).sum(axis=-2, keepdims=True) / np.where(ok, total, 1.0), 0.0)
        return np.where(ok, (2.0 * x - y) / np.where(ok, total, 1.0), 0.0), None
    # one segment spanning the clip: the one-stage formula with M = N
    return _one_stage_closed_form(x, w, fn, n)


def _one_stage_closed_form(x, w, fn, m):
    """Per-function gradient for one stage of length `m` and the closing average."""
    n = x.shape[-2]
    xs, ws = _segments(x, m), _segments(w, m)
    s = ws.sum(axis=-2, keepdims=True)
    s_ok = s > 0
    s_safe = np.where(s_ok, s, 1.0)
    xh = np.where(s_ok, (ws * xs).sum(axis=-2, keepdims=True) / s_safe, 0.0)
    wh = np.where(s_ok, (ws * ws).sum(axis=-2, keepdims=True) / s_safe, 0.0)
    wh_total = wh.sum(axis=-3, keepdims=True)
    t_ok = wh_total > 0
    t_safe = np.where(t_ok, wh_total, 1.0)
    y = np.where(t_ok, (wh * xh).sum(axis=-3, keepdims=True) / t_safe, 0.0)
    den = t_safe * s_safe
    ok = s_ok & t_ok

    d_w = None
    if fn is PoolingFunction.AVERAGE:
        d_x = np.full_like(xs, 1.0 / n)
    elif fn is PoolingFunction.MAX:
        d_x = ws.copy()
    elif fn is PoolingFunction.LINEAR_SOFTMAX:
        d_x = (xs * (4.0 * xh - 2.0 * y) - 2.0 * xh ** 2 + y * xh) / den
    elif fn is PoolingFunction.EXP_SOFTMAX:
        e = np.exp(xs)
        d_x = (wh * (1.0 + xs - 2.0 * xh + y) + 2.0 * e * (xh - y)) * e / den
    else:
        d_x = wh * ws / den
        d_w = (2.0 * ws * (xh - y) + wh * (xs + y - 2.0 * xh)) / den
        d_w = np.where(ok, d_w, 0.0).reshape(x.shape)
    d_x = np.where(ok, d_x, 0.0).reshape(x.shape)
    return d_x, d_w


def closed_form_gradient(scores, fn, plan=(), weights=None):
    """
    Closed-form dy/dx (and dy/dw for attention) for flat pooling or a
    single-stage plan, written per pooling function rather than composed.
    """
    fn = PoolingFunction.parse(fn)
    x, w = resolve_weights(scores, fn, weights)
    factors = validate_plan(plan, x.shape[-2])
    if len(factors) > 1:
        raise ValueError("closed forms cover flat and single-stage plans only")
    if factors:
        d_x, d_w = _one_stage_closed_form(x, w, fn, factors[0])
    else:
        d_x, d_w = _flat_closed_form(x, w, fn)
    return PoolingGradients(d_x, d_w)


def grad_single(scores, weights=None, fn=PoolingFunction.LINEAR_SOFTMAX):
    """
    dy/dx (and dy/dw for attention) for flat pooling.

    `weights` is only read for attention; other functions derive their
    weights from `scores`.
    """
    fn = PoolingFunction.parse(fn)
    return closed_form_gradient(scores, fn, (), weights if fn is PoolingFunction.ATTENTION else None)


def grad_hierarchical(scores, weights=None, fn=PoolingFunction.LINEAR_SOFTMAX, plan=(),
                      weight_rule="self"):
    """
    dy/dx (and dy/dw for attention) through the stages of `plan`.

    An empty plan reproduces `grad_single` exactly and a single-stage plan
    uses the per-function closed forms. Longer plans chain the one-stage
    Jacobians in reverse order.
    """
    fn = PoolingFunction.parse(fn)
    plan = tuple(plan)
    if not plan:
        return grad_single(scores, weights, fn)
    if len(plan) == 1 and weight_rule == "self":
        return closed_form_gradient(scores, fn, plan, weights if fn is PoolingFunction.ATTENTION else None)
    d_x, d_w = pool_backward(scores, fn, plan,
                             weights=weights if fn is PoolingFunction.ATTENTION else None,
                             weight_rule=weight_rule)
    return PoolingGradients(d_x, d_w if fn is PoolingFunction.ATTENTION else None)


def _clip_y(x, w, fn, plan, weight_rule):
    if w is None:
        w = compute_weights(x, fn)
    return forward_stages(x, w, plan, weight_rule)[1]


def _central_differences(x, w, fn, plan, step, wrt, weight_rule):
    """Central differences of y, one frame at a time across all classes."""
    n = x.shape[-2]
    eye = np.eye(n, dtype=x.dtype)[:, :, None] * step
    base = (x if wrt == "x" else w)[..., None, :, :]
    plus = base + eye
    minus = base - eye
    if wrt == "x":
        wp = None if w is None else np.broadcast_to(w[..., None, :, :], plus.shape)
        y_plus = _clip_y(np.clip(plus, 0, 1), wp, fn, plan, weight_rule)
        y_minus = _clip_y(np.clip(minus, 0, 1), wp, fn, plan, weight_rule)
    else:
        xp = np.broadcast_to(x[..., None, :, :], plus.shape)
        y_plus = _clip_y(xp, plus, fn, plan, weight_rule)
        y_minus = _clip_y(xp, minus, fn, plan, weight_rule)
    # fd[..., i, c] holds dy_c / d(frame i, class c)
    fd = (y_plus - y_minus) / (2 * step)
    valid = np.ones(fd.shape, dtype=bool)
    if fn is PoolingFunction.MAX and wrt == "x":
        idx = np.argmax(x, axis=-2)[..., None, :]
        valid = (np.argmax(plus, axis=-2) == idx) & (np.argmax(minus, axis=-2) == idx)
    return fd, valid


def finite_difference_check(scores, weights=None, fn=PoolingFunction.LINEAR_SOFTMAX, plan=(),
                            step=1e-5, weight_rule="self"):
    """
    Largest relative error between the analytic gradient and central
    differences of the forward pass.

    Parameters
    ----------
    scores: array, shape (..., N, C)
        Values should sit inside (0, 1). Leading axes are independent clips.
    weights: array, optional
        Attention weights; required for attention, ignored otherwise.
    step: float
        Finite-difference step.

    Returns
    -------
    error: float
        max |analytic - numeric| / max(|analytic|, 1e-8). For attention both
        dy/dx and dy/dw enter. For max pooling, perturbations that move the
        arg-max are left out.

    Notes
    -----
    The differenced forward passes run in extended precision so that the
    rounding error of y does not swamp small gradient entries.
    """
    fn = PoolingFunction.parse(fn)
    x = np.asarray(scores, dtype=float)
    if x.ndim < 2:
        raise ValueError("scores need shape (..., N, C)")
    if step <= 0:
        raise ValueError("step must be positive")
    factors = validate_plan(plan, x.shape[-2])
    grads = grad_hierarchical(x, weights, fn, factors, weight_rule)
    xe = x.astype(np.longdouble)
    we = None
    pairs = [("x", grads.d_y_d_x)]
    if fn is PoolingFunction.ATTENTION:
        we = np.asarray(weights, dtype=float).astype(np.longdouble)
        pairs.append(("w", grads.d_y_d_w))
    worst = 0.0
    for wrt, analytic in pairs:
        fd, valid = _central_differences(xe, we, fn, factors, np.longdouble(step), wrt, weight_rule)
        err = np.abs(analytic - fd.astype(float)) / np.maximum(np.abs(analytic), 1e-8)
        err = np.where(valid, err, 0.0)
        worst = max(worst, float(err.max()))
    return worst
