"""
Reverse-mode gradients on a tiny graph
======================================

Every model in the package is built from ``cmin.tensor`` operations. Here we
push two leaves through a few of them, call backward, and compare against
central differences.
"""

import numpy as np

from cmin import tensor as T
from cmin.params import ParamTree, grad_check

rng = np.random.default_rng(0)
w = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
x = T.Tensor(rng.standard_normal((5, 4)), requires_grad=True)

# a softmax over a tanh layer, summed against fixed weights
target = rng.standard_normal((5, 3))
loss = T.tsum(T.mul(T.softmax(T.tanh(T.linear(x, w))), target))
loss.backward()
print("loss", loss.item())
print("dL/dw row 0", np.round(w.grad[0], 4))

# finite differences agree to roughly 1e-10
err = grad_check(lambda: T.tsum(T.mul(T.softmax(T.tanh(T.linear(x, w))), target)),
                 ParamTree({"w": w, "x": x}))
print("max relative error", err)

# the fused GRU scan has its own backward; it masks padded steps
gates = rng.standard_normal((2, 6, 9))
U = rng.standard_normal((9, 3)) * 0.5
mask = np.array([[1, 1, 1, 1, 1, 1], [1, 1, 1, 0, 0, 0]], dtype=float)
states = T.gru_scan(gates, U, mask=mask)
print("padded steps stay zero:", np.all(states.data[1, 3:] == 0))
