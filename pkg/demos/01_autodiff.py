"""Reverse-mode autodiff on numpy, checked against finite differences.

Builds a small attention-plus-MLP expression, backpropagates through it,
and compares every gradient with central differences in float64.

    python demos/01_autodiff.py
"""

import numpy as np

from tokenpose import tensor as T
from tokenpose.gradcheck import gradcheck

rng = np.random.default_rng(0)
x = T.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
w = T.Tensor(rng.normal(size=(4, 4)), requires_grad=True)

# a forward pass: scores, softmax, mix, nonlinearity, scalar loss
scores = (x @ w) @ T.swap_last(x) * 0.5
mixed = T.softmax_lastdim(scores) @ x
loss = T.mean(T.gelu(mixed) * T.gelu(mixed))
T.backward(loss)
print(f"loss = {float(loss.data):.6f}")
print("dloss/dw row 0:", np.round(w.grad[0], 5))


def expression(x, w):
    scores = (x @ w) @ T.swap_last(x) * 0.5
    return T.mean(T.gelu(T.softmax_lastdim(scores) @ x) ** 2)


result = gradcheck(expression, [x.data.copy(), w.data.copy()])
print(f"max relative error vs central differences: {result.max_rel_error:.2e}")

# ops used by the network, each checked on its own
checks = {
    "layer_norm": (lambda a, g, b: T.layer_norm(a, g, b),
                   [rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)]),
    "conv2d": (lambda a, k: T.conv2d(a, k, stride=2, padding=1),
               [rng.normal(size=(1, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3))]),
    "log_softmax": (lambda a: T.log(T.softmax_lastdim(a)), [rng.normal(size=(2, 5))]),
}
for name, (fn, arrays) in checks.items():
    print(f"{name:12s} max rel error {gradcheck(fn, arrays).max_rel_error:.2e}")
