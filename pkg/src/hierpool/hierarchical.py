"""
Hierarchical pooling: frames are aggregated segment by segment before the
final clip-level average.

Each stage groups consecutive items into segments of length M and emits one
prediction and one weight per segment:

    x_seg = sum(w x) / sum(w)
    w_seg = sum(w^2) / sum(w)

A segment whose weights sum to zero emits (0, 0) and so drops out of every
later average. ``weight_rule="mean"`` switches the segment weight to the
plain average sum(w) / M, kept only to reproduce results with that rule.
"""

from dataclasses import dataclass

import numpy as np

from .pooling import PoolingFunction, check_scores, check_weights, resolve_weights

WEIGHT_RULES = ("self", "mean")


@dataclass(frozen=True)
class StageOutput:
    predictions: np.ndarray
    weights: np.ndarray


def validate_plan(plan, n_frames):
    """Return `plan` as a tuple of ints, checking that its product divides `n_frames`."""
    factors = tuple(int(m) for m in (plan or ()))
    if any(m < 1 for m in factors):
        raise ValueError(f"stage factors must be positive, got {list(factors)}")
    length = n_frames
    for m in factors:
        if length % m:
            raise ValueError(f"stage plan {list(factors)} does not divide {n_frames} frames")
        length //= m
    return factors


def parse_plan(text):
    """'5,5,5' or '5x5x5' -> (5, 5, 5); '' / 'flat' / 'single' -> ()."""
    text = str(text).strip().lower()
    if text in ("", "flat", "single", "none", "[]"):
        return ()
    text = text.strip("[]()").replace("x", ",")
    return tuple(int(t) for t in text.split(",") if t.strip())


def default_plan(n_frames):
    """
    Stage factors for `n_frames`, each at most 5, multiplying to `n_frames`.

    Greedy: repeatedly take the largest factor in 5..2 that divides what is
    left. 125 gives [5, 5, 5]; counts with a prime factor above 5 give []
    (flat pooling).
    """
    n = int(n_frames)
    if n < 1:
        raise ValueError("n_frames must be positive")
    factors = []
    while n > 1:
        for m in (5, 4, 3, 2):
            if n % m == 0:
                factors.append(m)
                n //= m
                break
        else:
            return []
    return factors


def _segment_view(a, m):
    shape = a.shape[:-2] + (a.shape[-2] // m, m, a.shape[-1])
    return a.reshape(shape)


def _aggregate(x, w, m, weight_rule):
    xs = _segment_view(x, m)
    ws = _segment_view(w, m)
    den = ws.sum(axis=-2)
    ok = den > 0
    safe = np.where(ok, den, 1.0)
    pred = np.where(ok, (ws * xs).sum(axis=-2) / safe, 0.0)
    if weight_rule == "self":
        seg_w = np.where(ok, (ws * ws).sum(axis=-2) / safe, 0.0)
    elif weight_rule == "mean":
        seg_w = np.where(ok, den / m, 0.0)
    else:
        raise ValueError(f"weight_rule must be one of {WEIGHT_RULES}")
    return pred, seg_w


def aggregate_stage(scores, weights, m, weight_rule="self"):
    """
    One aggregation stage over segments of `m` consecutive frames.

    Parameters
    ----------
    scores: array, shape (..., L, C)
    weights: array, same shape, non-negative
    m: int
        Segment length; must divide L.
    weight_rule: {"self", "mean"}
        Segment weight as the self-weighted mean of the member weights
        (default) or their plain mean.

    Returns
    -------
    StageOutput with arrays of shape (..., L/m, C).
    """
    x = check_scores(scores)
    w = check_weights(weights, x.shape)
    m = int(m)
    if m < 1 or x.shape[-2] % m:
        raise ValueError(f"segment length {m} does not divide {x.shape[-2]} frames")
    pred, seg_w = _aggregate(x, w, m, weight_rule)
    return StageOutput(pred, seg_w)


def forward_stages(x, w, plan, weight_rule="self"):
    """
    Run every stage of `plan` followed by the final average.

    Returns the list of (scores, weights) fed into each stage, the last entry
    being the input to the closing clip-level average, together with y.
    Inputs are assumed already validated.
    """
    levels = [(x, w)]
    for m in plan:
        x, w = _aggregate(x, w, m, weight_rule)
        levels.append((x, w))
    den = w.sum(axis=-2)
    ok = den > 0
    y = np.where(ok, (w * x).sum(axis=-2) / np.where(ok, den, 1.0), 0.0)
    return levels, y


def pool_hierarchical(scores, weights, plan, weight_rule="self"):
    """
    Clip probability through the stages of `plan`, then a weighted average
    over the remaining segments. An empty plan is flat pooling.

    Parameters
    ----------
    scores: array, shape (..., N, C)
    weights: array, same shape
    plan: sequence of int
        Stage segment lengths; their product must divide N.

    Returns
    -------
    y: array, shape (..., C)
    """
    x = check_scores(scores)
    w = check_weights(weights, x.shape)
    factors = validate_plan(plan, x.shape[-2])
    return forward_stages(x, w, factors, weight_rule)[1]


def pool_with(scores, fn, plan=(), weights=None, weight_rule="self"):
    """Hierarchical pooling with weights derived from `fn` (or given, for attention)."""
    x, w = resolve_weights(scores, fn, weights)
    factors = validate_plan(plan, x.shape[-2])
    return forward_stages(x, w, factors, weight_rule)[1]


@dataclass(frozen=True)
class PoolingSpec:
    """
    Pooling function plus structure.

    `plan` is the tuple of stage factors; ``None`` means "use
    `default_plan` for whatever frame count comes in", ``()`` means flat.
    """

    fn: str = "linear"
    plan: tuple | None = ()
    weight_rule: str = "self"

    def __post_init__(self):
        object.__setattr__(self, "fn", PoolingFunction.parse(self.fn).value)
        if self.plan is not None:
            object.__setattr__(self, "plan", tuple(int(m) for m in self.plan))
        if self.weight_rule not in WEIGHT_RULES:
            raise ValueError(f"weight_rule must be one of {WEIGHT_RULES}")

    def resolve_plan(self, n_frames):
        plan = default_plan(n_frames) if self.plan is None else self.plan
        return validate_plan(plan, n_frames)

    @property
    def structure(self):
        if self.plan is None:
            return "hierarchical"
        return "single" if not self.plan else "hierarchical"

    @property
    def label(self):
        if self.plan is None:
            plan = "auto"
        else:
            plan = "x".join(str(m) for m in self.plan) or "flat"
        return f"{self.fn}-{plan}"

    @classmethod
    def from_strings(cls, fn, structure, weight_rule="self"):
        """'single'/'flat' -> flat, 'hierarchical'/'hier' -> default plan, else '5,5,5'."""
        s = str(structure).strip().lower()
        if s in ("hierarchical", "hier", "auto"):
            return cls(fn, None, weight_rule)
        return cls(fn, parse_plan(s), weight_rule)
