"""
Desk-scale frame scorer trained from clip-level labels.

A per-frame MLP maps features u to a hidden layer h = tanh(u W1 + b1). Frame
probabilities are x = sigmoid(h W2 + b2). For attention pooling the frame
weights are w = max(softmax_classes(h Wa + ba), 1e-7); every other pooling
function derives w from x. Frames are pooled to clip probabilities and the
loss is binary cross-entropy per class.

Backpropagation is written out by hand; the pooling layer uses
`gradients.backward`.
"""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetError, NumericalError
from .gradients import CLAMP_EPS, backward, loss as bce_loss, loss_grad
from .hierarchical import PoolingSpec, forward_stages
from .pooling import PoolingFunction, compute_weights, weight_derivative

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wa", "ba")
ATTENTION_FLOOR = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    early_stop_patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    hidden_dim: int = 32
    pooling: PoolingSpec = field(default_factory=PoolingSpec)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.early_stop_patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and early_stop_patience must be positive")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")

    def to_dict(self):
        d = asdict(self)
        d["pooling"] = {"fn": self.pooling.fn,
                        "plan": None if self.pooling.plan is None else list(self.pooling.plan),
                        "weight_rule": self.pooling.weight_rule}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        p = d.pop("pooling", None)
        if p is not None:
            plan = p.get("plan")
            d["pooling"] = PoolingSpec(p["fn"], None if plan is None else tuple(plan),
                                       p.get("weight_rule", "self"))
        return cls(**d)

    def hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def init_params(feature_dim, hidden_dim, n_classes, seed=0):
    """Glorot-uniform weights, zero biases."""
    if feature_dim < 1 or hidden_dim < 1 or n_classes < 1:
        raise ValueError("feature, hidden and class dimensions must be positive")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    return {
        "W1": glorot(feature_dim, hidden_dim), "b1": np.zeros(hidden_dim),
        "W2": glorot(hidden_dim, n_classes), "b2": np.zeros(n_classes),
        "Wa": glorot(hidden_dim, n_classes), "ba": np.zeros(n_classes),
    }


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(features, params, fn=PoolingFunction.LINEAR_SOFTMAX, cache=False):
    """
    Frame scores and weights for `features` of shape (..., N, D).

    Returns (scores, weights), plus a dict of intermediates when `cache`.
    """
    fn = PoolingFunction.parse(fn)
    u = np.asarray(features, dtype=params["W1"].dtype)
    h = np.tanh(u @ params["W1"] + params["b1"])
    x = _sigmoid(h @ params["W2"] + params["b2"])
    soft = None
    if fn is PoolingFunction.ATTENTION:
        soft = _softmax(h @ params["Wa"] + params["ba"])
        w = np.maximum(soft, ATTENTION_FLOOR)
    else:
        w = compute_weights(x, fn)
    if cache:
        return x, w, {"u": u, "h": h, "soft": soft}
    return x, w


def predict_frames(features, params):
    """Frame probabilities only."""
    u = np.asarray(features, dtype=params["W1"].dtype)
    return _sigmoid(np.tanh(u @ params["W1"] + params["b1"]) @ params["W2"] + params["b2"])


def predict_clips(features, params, pooling):
    x, w = forward(features, params, pooling.fn)
    plan = pooling.resolve_plan(x.shape[-2])
    return forward_stages(x, w, plan, pooling.weight_rule)[1]


def loss_and_grad(features, labels, params, pooling):
    """
    Total clip-level loss over a batch and its gradient for every parameter.

    Parameters
    ----------
    features: array, shape (B, N, D)
    labels: array, shape (B, C), 0/1
    params: dict of arrays
    pooling: PoolingSpec

    Returns
    -------
    loss: float
        Binary cross-entropy summed over clips and classes.
    grads: dict of arrays, same keys as `params`
    """
    fn = PoolingFunction.parse(pooling.fn)
    with np.errstate(over="ignore", invalid="ignore"):
        h = np.tanh(np.asarray(features, dtype=params["W1"].dtype) @ params["W1"] + params["b1"])
        finite = np.all(np.isfinite(h @ params["W2"]))
    if not finite:
        raise NumericalError("non-finite frame logits; parameters have diverged")
    x, w, c = forward(features, params, fn, cache=True)
    plan = pooling.resolve_plan(x.shape[-2])
    _, y = forward_stages(x, w, plan, pooling.weight_rule)
    total = bce_loss(y, labels)
    g_x, g_w = backward(x, w, plan, loss_grad(y, labels).astype(x.dtype), pooling.weight_rule)
    g_x = g_x + g_w * weight_derivative(x, fn)

    u, h = c["u"], c["h"]
    flat_h = h.reshape(-1, h.shape[-1])
    g_z = (g_x * x * (1.0 - x)).reshape(-1, x.shape[-1])
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    grads["W2"] = flat_h.T @ g_z
    grads["b2"] = g_z.sum(axis=0)
    g_h = g_z @ params["W2"].T
    if fn is PoolingFunction.ATTENTION:
        soft = c["soft"]
        g_s = g_w * (soft > ATTENTION_FLOOR)
        g_a = (soft * (g_s - (g_s * soft).sum(axis=-1, keepdims=True))).reshape(-1, soft.shape[-1])
        grads["Wa"] = flat_h.T @ g_a
        grads["ba"] = g_a.sum(axis=0)
        g_h = g_h + g_a @ params["Wa"].T
    g_pre = g_h * (1.0 - flat_h ** 2)
    grads["W1"] = u.reshape(-1, u.shape[-1]).T @ g_pre
    grads["b1"] = g_pre.sum(axis=0)
    return total, grads


def gradient_check(features, labels, params, pooling, step=1e-6):
    """
    Largest relative error of `loss_and_grad` against central differences
    of the loss, over every entry of every parameter.

    The differences are taken in long double so that round-off in the loss
    stays well below the truncation error. The error of an entry is
    |analytic - numeric| / max(|analytic|, 1e-8).
    Returns (max error, name of the worst parameter).
    """
    _, grads = loss_and_grad(features, labels, params, pooling)
    u = np.asarray(features, dtype=np.longdouble)
    t = np.asarray(labels, dtype=np.longdouble)

    def wide_loss():
        y = np.clip(predict_clips(u, wide, pooling), CLAMP_EPS, 1 - CLAMP_EPS)
        return np.sum(-t * np.log(y) - (1 - t) * np.log1p(-y))

    wide = {k: np.asarray(v, dtype=np.longdouble) for k, v in params.items()}
    worst, where = 0.0, None
    for name, p in wide.items():
        for idx in np.ndindex(*p.shape):
            saved = p[idx]
            p[idx] = saved + step
            up = wide_loss()
            p[idx] = saved - step
            down = wide_loss()
            p[idx] = saved
            numeric = float((up - down) / (2 * np.longdouble(step)))
            err = abs(grads[name][idx] - numeric) / max(abs(grads[name][idx]), 1e-8)
            if err > worst:
                worst, where = err, name
    return worst, where


class Adam:
    """Adam with bias correction; state is plain arrays so it can be checkpointed."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grads[k] ** 2
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainState:
    params: dict
    optimizer: Adam
    best_params: dict
    best_val: float = float("inf")
    bad_epochs: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)
    stopped: bool = False


def mean_loss(features, labels, params, pooling, batch_size=256):
    """Loss per clip, averaged over the split."""
    total = 0.0
    for k in range(0, len(features), batch_size):
        y = predict_clips(features[k:k + batch_size], params, pooling)
        total += bce_loss(y, labels[k:k + batch_size])
    return total / len(features)


def new_state(dataset, config):
    feats, labels = dataset.arrays("train")
    if feats is None:
        raise DatasetError("training split is empty")
    params = init_params(feats.shape[-1], config.hidden_dim, labels.shape[-1], config.seed)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    return TrainState(params, opt, {k: v.copy() for k, v in params.items()})


def train(dataset, config, state=None, on_epoch=None):
    """
    Fit the scorer with Adam on clip-level labels and early stopping.

    Parameters
    ----------
    dataset: synth.Dataset
        Needs non-empty train and val splits.
    config: TrainConfig
    state: TrainState, optional
        Resume from a saved state instead of starting fresh.
    on_epoch: callable, optional
        Called with the TrainState after every epoch.

    Returns
    -------
    params: dict
        Parameters with the lowest validation loss.
    state: TrainState
        Final state; `state.history` has one dict per epoch.

    Each minibatch step uses the loss averaged over the clips in the batch.
    Shuffling depends only on (seed, epoch), so a resumed run repeats the
    uninterrupted one exactly.
    """
    train_x, train_t = dataset.arrays("train")
    val_x, val_t = dataset.arrays("val")
    if train_x is None or val_x is None:
        raise DatasetError("training needs non-empty train and val splits")
    if not (np.all(np.isfinite(train_x)) and np.all(np.isfinite(val_x))):
        raise DatasetError("features contain NaN or infinite values")
    config.pooling.resolve_plan(train_x.shape[1])
    if state is None:
        state = new_state(dataset, config)
    n = len(train_x)
    while not state.stopped and state.epoch < config.max_epochs:
        order = np.random.default_rng([config.seed, state.epoch]).permutation(n)
        running = 0.0
        for k in range(0, n, config.batch_size):
            idx = order[k:k + config.batch_size]
            batch_loss, grads = loss_and_grad(train_x[idx], train_t[idx], state.params, config.pooling)
            if not np.isfinite(batch_loss):
                raise NumericalError(f"non-finite loss at epoch {state.epoch}, batch {k // config.batch_size}")
            scale = 1.0 / len(idx)
            state.optimizer.step(state.params, {g: v * scale for g, v in grads.items()})
            running += batch_loss
        val = mean_loss(val_x, val_t, state.params, config.pooling)
        if not np.isfinite(val):
            raise NumericalError(f"non-finite validation loss at epoch {state.epoch}")
        state.history.append({"epoch": state.epoch, "train_loss": running / n, "val_loss": val})
        state.epoch += 1
        if val < state.best_val:
            state.best_val = val
            state.best_params = {k: v.copy() for k, v in state.params.items()}
            state.bad_epochs = 0
        else:
            state.bad_epochs += 1
            if state.bad_epochs >= config.early_stop_patience:
                state.stopped = True
        log.debug("epoch %d train %.4f val %.4f", state.epoch, running / n, val)
        if on_epoch is not None:
            on_epoch(state)
    return state.best_params, state


# --- checkpoints -------------------------------------------------------------

def _array_groups(state):
    return {"params": state.params, "best": state.best_params,
            "adam_m": state.optimizer.m, "adam_v": state.optimizer.v}


def save_checkpoint(path, state, config):
    """
    u32 header length, JSON header (array names and shapes, config, config
    hash, optimizer and early-stopping state, history), then every array as
    little-endian float64 in header order.
    """
    arrays, chunks = [], []
    for group, d in _array_groups(state).items():
        for name in PARAM_NAMES:
            arrays.append([f"{group}.{name}", list(d[name].shape)])
            chunks.append(np.ascontiguousarray(d[name], dtype="<f8").tobytes())
    header = {
        "format": "hierpool-checkpoint", "version": 1, "arrays": arrays,
        "config": config.to_dict(), "config_hash": config.hash(),
        "state": {"epoch": state.epoch, "adam_t": state.optimizer.t,
                  "best_val": state.best_val if np.isfinite(state.best_val) else None,
                  "bad_epochs": state.bad_epochs, "stopped": state.stopped},
        "history": state.history,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(struct.pack("<I", len(blob)) + blob + b"".join(chunks))


def load_checkpoint(path):
    """Returns (TrainState, TrainConfig)."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise DatasetError(f"{path}: truncated checkpoint")
    (size,) = struct.unpack_from("<I", data)
    try:
        header = json.loads(data[4:4 + size])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise DatasetError(f"{path}: unreadable checkpoint header") from None
    if header.get("format") != "hierpool-checkpoint":
        raise DatasetError(f"{path}: not a checkpoint")
    pos = 4 + size
    groups = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        if pos + 8 * count > len(data):
            raise DatasetError(f"{path}: truncated array {name}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(float)
        pos += 8 * count
        group, key = name.split(".")
        groups.setdefault(group, {})[key] = arr
    if pos != len(data):
        raise DatasetError(f"{path}: trailing bytes")
    config = TrainConfig.from_dict(header["config"])
    if config.hash() != header["config_hash"]:
        raise DatasetError(f"{path}: config hash mismatch")
    opt = Adam(groups["params"], config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    opt.m, opt.v, opt.t = groups["adam_m"], groups["adam_v"], header["state"]["adam_t"]
    s = header["state"]
    state = TrainState(groups["params"], opt, groups["best"],
                       float("inf") if s["best_val"] is None else s["best_val"],
                       s["bad_epochs"], s["epoch"], header["history"], s["stopped"])
    return state, config


def resume_config(config, **changes):
    """Copy of `config` with fields replaced, e.g. a larger `max_epochs`."""
    return replace(config, **changes)
