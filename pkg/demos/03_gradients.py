"""
Gradients of the pooling functions
==================================

The gradient a frame receives decides what the frame-level classifier
learns. With flat linear softmax, frames scoring under half the clip
prediction are pushed down even inside a positive clip.
"""

import numpy as np

from hierpool import finite_difference_check, grad_hierarchical, grad_single

x = np.array([[0.2], [0.4], [0.6], [0.8]])
g = grad_single(x).d_y_d_x[:, 0]
print("flat linear softmax dy/dx:", g)          # (2 x_i - y) / sum(x)
print("negative entries: frames below y/2 =", 0.6 / 2)

# Hierarchical pooling couples the frames of a segment: a frame's gradient
# depends on its segment's prediction as well as on the clip prediction.
gh = grad_hierarchical(x, fn="linear", plan=(2,)).d_y_d_x[:, 0]
print("plan [2] dy/dx:           ", np.round(gh, 4))
# here the low frames are no longer pushed down: their segment partners
# lift the segment prediction they share

# Analytic gradients against central differences, for every function
rng = np.random.default_rng(2)
scores = rng.uniform(0.05, 0.95, size=(50, 125, 1))
weights = rng.uniform(0.05, 0.95, size=scores.shape)
for fn in ("average", "linear", "exp", "attention"):
    for plan in ((), (5, 5, 5)):
        err = finite_difference_check(scores, weights if fn == "attention" else None, fn, plan, step=1e-6)
        print(f"{fn:9s} plan {list(plan)!s:9s} max relative error {err:.1e}")

# The same check from the command line:  hierpool gradcheck --trials 100
