"""
Hierarchical pooling
====================

Frames are first pooled inside short segments; each segment then carries
a prediction and a weight into the next stage. A 125-frame clip with the
default plan goes 125 -> 25 -> 5 -> 1.
"""

import numpy as np

from hierpool import default_plan, pool_single, pool_with
from hierpool.hierarchical import aggregate_stage

x = np.array([[0.2], [0.4], [0.6], [0.8]])

# one stage of length 2: segment predictions and self-weighted weights
stage = aggregate_stage(x, x, 2)
print("segment predictions", stage.predictions[:, 0], "weights", stage.weights[:, 0])
print("flat y       ", pool_with(x, "linear")[0])
print("plan [2] y   ", pool_with(x, "linear", (2,))[0], "(exactly 274/462)")

print("default plan for 125 frames:", default_plan(125))
print("default plan for 120 frames:", default_plan(120))
print("default plan for 7 frames:  ", default_plan(7), "(flat)")

# For max and average pooling the structure changes nothing.
rng = np.random.default_rng(1)
scores = rng.uniform(size=(1000, 125, 1))
for fn in ("max", "average"):
    gap = np.abs(pool_with(scores, fn, (5, 5, 5)) - pool_with(scores, fn)).max()
    print(f"{fn}: largest hierarchical vs flat gap {gap:.1e}")

# For linear softmax it does. In a clip with one short burst of high scores
# the burst's segments keep weights close to their own high prediction,
# while background segments keep small ones, so the clip prediction moves
# toward the burst score.
clip = np.full((125, 1), 0.05)
clip[60:64] = 0.9
print("burst clip: flat", round(pool_with(clip, "linear")[0], 4),
      " hierarchical", round(pool_with(clip, "linear", (5, 5, 5))[0], 4))
# a long event is barely affected
clip[50:90] = 0.9
print("long event: flat", round(pool_with(clip, "linear")[0], 4),
      " hierarchical", round(pool_with(clip, "linear", (5, 5, 5))[0], 4))
