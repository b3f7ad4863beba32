"""
Pooling frame probabilities into a clip probability
====================================================

Every pooling function here is a weighted mean of the frame probabilities
x_i. They differ only in where the weights come from.
"""

import numpy as np

from hierpool import PoolingFunction, compute_weights, pool

# four frames, one class
x = np.array([[0.2], [0.4], [0.6], [0.8]])

# max and average sit at the two extremes; the softmax variants weight
# confident frames more
for fn in ("max", "average", "linear", "exp"):
    w = compute_weights(x, fn)
    print(f"{fn:8s} weights {np.round(w[:, 0] / w.sum(), 3)}  y = {pool(x, fn)[0]:.4f}")

# attention takes its weights from elsewhere (a learned head in the model)
w = np.array([[0.1], [0.1], [0.1], [5.0]])
print(f"attention with a peaked head: y = {pool(x, PoolingFunction.ATTENTION, w)[0]:.4f}")

# linear softmax gives the frames a weight equal to their own score, so
# y = sum(x^2) / sum(x); for this clip that is 1.2 / 2.0
assert np.isclose(pool(x, "linear")[0], 0.6)

# pooling works on any leading batch shape: (clips, frames, classes)
batch = np.random.default_rng(0).uniform(size=(3, 125, 4))
print("batched output shape:", pool(batch, "exp").shape)
