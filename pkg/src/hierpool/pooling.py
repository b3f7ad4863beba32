"""
Flat multi-instance pooling.

Every pooling function is a weighted average of frame probabilities,

    y = sum_i w_i x_i / sum_i w_i

and differs only in how the weights are obtained:

- `MAX`: one-hot at the arg-max frame (lowest index on ties)
- `AVERAGE`: 1/N for every frame
- `LINEAR_SOFTMAX`: w_i = x_i
- `EXP_SOFTMAX`: w_i = exp(x_i)
- `ATTENTION`: supplied by a model head, never derived from x

Arrays put frames on axis -2 and classes on axis -1, so a single clip is
``(N, C)`` and a batch is ``(B, N, C)``. Classes never interact.
"""

from enum import Enum

import numpy as np


class PoolingFunction(str, Enum):
    MAX = "max"
    AVERAGE = "average"
    LINEAR_SOFTMAX = "linear"
    EXP_SOFTMAX = "exp"
    ATTENTION = "attention"

    @classmethod
    def parse(cls, value):
        """Accept an enum member or its string value (case-insensitive)."""
        if isinstance(value, cls):
            return value
        aliases = {"avg": "average", "lin": "linear", "linear_softmax": "linear",
                   "exp_softmax": "exp", "att": "attention"}
        key = str(value).strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown pooling function {value!r}") from None


def as_float_array(a):
    """Float view of `a`, keeping extended precision if it is already present."""
    a = np.asarray(a)
    return a.astype(np.result_type(a.dtype, np.float64), copy=False)


def check_scores(scores):
    x = as_float_array(scores)
    if x.ndim < 2:
        raise ValueError(f"scores need shape (..., N, C), got {x.shape}")
    if x.shape[-2] < 1 or x.shape[-1] < 1:
        raise ValueError("scores need at least one frame and one class")
    if np.any(x < 0) or np.any(x > 1) or np.any(np.isnan(x)):
        raise ValueError("scores must lie in [0, 1]")
    return x


def check_weights(weights, shape):
    w = as_float_array(weights)
    if w.shape != tuple(shape):
        raise ValueError(f"weights shape {w.shape} does not match scores shape {tuple(shape)}")
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise ValueError("weights must be non-negative")
    return w


def compute_weights(scores, fn):
    """
    Frame weights implied by a score-derived pooling function.

    Parameters
    ----------
    scores: array, shape (..., N, C)
        Frame probabilities in [0, 1].
    fn: PoolingFunction or str
        Any pooling function except attention.

    Returns
    -------
    weights: array, same shape as `scores`

    Raises
    ------
    ValueError: For attention pooling, whose weights are a model output.
    """
    fn = PoolingFunction.parse(fn)
    x = check_scores(scores)
    if fn is PoolingFunction.MAX:
        idx = np.argmax(x, axis=-2)
        w = np.zeros_like(x)
        np.put_along_axis(w, np.expand_dims(idx, -2), 1.0, axis=-2)
        return w
    if fn is PoolingFunction.AVERAGE:
        return np.full_like(x, 1.0 / x.shape[-2])
    if fn is PoolingFunction.LINEAR_SOFTMAX:
        return x.copy()
    if fn is PoolingFunction.EXP_SOFTMAX:
        return np.exp(x)
    raise ValueError("attention weights come from the model head and cannot be derived from scores")


def weight_derivative(scores, fn):
    """Elementwise dw_i/dx_i for `fn` (zero for max, average and attention)."""
    fn = PoolingFunction.parse(fn)
    x = as_float_array(scores)
    if fn is PoolingFunction.LINEAR_SOFTMAX:
        return np.ones_like(x)
    if fn is PoolingFunction.EXP_SOFTMAX:
        return np.exp(x)
    return np.zeros_like(x)


def resolve_weights(scores, fn, weights=None):
    """Weights for `fn`: derived from scores, or the validated attention weights."""
    fn = PoolingFunction.parse(fn)
    x = check_scores(scores)
    if fn is PoolingFunction.ATTENTION:
        if weights is None:
            raise ValueError("attention pooling needs explicit weights")
        return x, check_weights(weights, x.shape)
    return x, compute_weights(x, fn)


def weighted_mean(x, w, axis=-2):
    """Sum(w x) / sum(w) along `axis`; zero wherever sum(w) is zero."""
    den = w.sum(axis=axis)
    num = (w * x).sum(axis=axis)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0)


def pool_single(scores, weights):
    """
    Clip probability from frame scores and weights in a single step.

    Parameters
    ----------
    scores: array, shape (..., N, C)
    weights: array, same shape, non-negative

    Returns
    -------
    y: array, shape (..., C)
        Weighted mean over frames. Classes whose weights sum to zero get 0.
    """
    x = check_scores(scores)
    w = check_weights(weights, x.shape)
    return weighted_mean(x, w)


def pool(scores, fn, weights=None):
    """Flat pooling with weights derived from `fn` (or given, for attention)."""
    x, w = resolve_weights(scores, fn, weights)
    return weighted_mean(x, w)
