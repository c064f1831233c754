"""
Reverse-mode gradients on small arrays
======================================

Build a tiny graph, read the recorded nodes, and compare the backward pass
with finite differences.
"""

import numpy as np

from stagediff import autodiff as ad
from stagediff.autodiff import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
W = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

# Only operations run inside new_graph() are kept on the tape.
with ad.new_graph() as graph:
    loss = ad.mean(ad.gelu(ad.broadcast_add(ad.matmul(x, W), b)))
print("recorded ops:", [n.kind for n in graph.nodes])

ad.backward(loss)
print("dL/dW:\n", W.grad)

# grad_check perturbs every entry and reports the worst relative error.
W.zero_grad(); x.zero_grad(); b.zero_grad()
err = ad.grad_check(lambda: ad.mean(ad.gelu(ad.broadcast_add(ad.matmul(x, W), b))), [x, W, b])
print(f"max relative error vs central differences: {err:.2e}")
