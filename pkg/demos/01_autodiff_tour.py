"""
A tour of the tensor library
============================

Everything in the model is built from a handful of differentiable numpy ops.
This script builds a small expression, runs backward, and checks the result
against central differences.
"""

import numpy as np

from spmgen import autodiff as ad
from spmgen.autodiff import Tensor, no_grad

rng = np.random.default_rng(0)

# a 3x4 weight matrix and a batch of two 4-dim inputs
W = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
x = Tensor(rng.normal(size=(2, 4)))

# softmax over a linear layer, then the log-prob of class 1 per row
p = ad.softmax(ad.matmul(x, W.T))
loss = -ad.sum(ad.log(p[:, 1]))
print("loss", loss.item())

loss.backward()
print("dloss/dW\n", W.grad)

# %%
# Central differences agree to ~1e-10
def f():
    with no_grad():
        return -ad.sum(ad.log(ad.softmax(ad.matmul(x, W.T))[:, 1])).item()

num = np.zeros_like(W.data)
for idx in np.ndindex(W.shape):
    old = W.data[idx]
    W.data[idx] = old + 1e-5
    hi = f()
    W.data[idx] = old - 1e-5
    lo = f()
    W.data[idx] = old
    num[idx] = (hi - lo) / 2e-5
print("max abs difference", np.abs(num - W.grad).max())

# %%
# The fused LSTM cell returns [h'; c'] side by side
H = 3
w = Tensor(rng.normal(scale=0.3, size=(4 * H, 4 + H)), requires_grad=True)
b = Tensor(np.zeros(4 * H), requires_grad=True)
h0 = c0 = Tensor(np.zeros((2, H)))
hc = ad.lstm_cell(x, h0, c0, w, b)
print("cell output shape", hc.shape)  # (2, 2H)
