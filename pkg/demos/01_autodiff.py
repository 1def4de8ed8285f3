"""
Reverse-mode autodiff on small matrices
=======================================

A two-layer graph convolution on a triangle, differentiated by the tape and
checked against central finite differences.
"""

import numpy as np

from care import diffcore as dc
from care.diffcore import Tensor
from care.graphio import normalize_adjacency

rng = np.random.default_rng(0)

# triangle graph: every node sees the other two plus itself after normalisation
a = np.ones((3, 3)) - np.eye(3)
a_hat = normalize_adjacency(a)
print("normalised adjacency\n", a_hat)

x = Tensor(rng.normal(size=(3, 4)))
w1 = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)


def forward():
    h = dc.relu(dc.matmul(dc.matmul_const(a_hat, x), w1))
    h = dc.matmul(dc.matmul_const(a_hat, h), w2)
    return dc.softmax_cross_entropy(dc.reduce(h, "mean"), [1])


loss = forward()
dc.backward(loss)
print("loss", loss.item())
print("dL/dW2\n", w2.grad)

# central differences agree to well under 1e-4
print("gradcheck relative error", dc.gradcheck(forward, [w1, w2]))

# one Adam step lowers the loss
opt = dc.Adam({"w1": w1, "w2": w2}, lr=1e-2)
opt.step()
print("loss after one step", forward().item())
