"""The reverse-mode autodiff engine that powers all training here.

Builds a tiny two-layer network on raw Tensors, checks one gradient
against finite differences, and runs a few Adam steps on a toy
regression to show the optimizer loop.
"""

import numpy as np

import evmem.autodiff as ad
from evmem.autodiff import Tensor
from evmem.optim import Adam

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(8, 4)))
params = {
    "w1": Tensor(rng.normal(size=(4, 16)) * 0.3, requires_grad=True),
    "b1": Tensor(np.zeros(16), requires_grad=True),
    "w2": Tensor(rng.normal(size=(16, 1)) * 0.3, requires_grad=True),
}
target = np.sin(x.data.sum(axis=1, keepdims=True))


def forward():
    h = ad.gelu(ad.matmul(x, params["w1"]) + params["b1"])
    return ad.matmul(h, params["w2"])


loss = ad.tmean((forward() - Tensor(target)) ** 2)
ad.backward(loss)

# finite-difference check of one weight entry
eps = 1e-6
w = params["w1"].data
w[2, 3] += eps
up = float(ad.tmean((forward() - Tensor(target)) ** 2).data)
w[2, 3] -= 2 * eps
down = float(ad.tmean((forward() - Tensor(target)) ** 2).data)
w[2, 3] += eps
numeric = (up - down) / (2 * eps)
analytic = params["w1"].grad[2, 3]
print(f"dL/dw1[2,3]: analytic {analytic:.10f} numeric {numeric:.10f}")
assert abs(analytic - numeric) < 1e-7

opt = Adam(params, lr=3e-2)
for step in range(60):
    for p in params.values():
        p.grad = None
    loss = ad.tmean((forward() - Tensor(target)) ** 2)
    ad.backward(loss)
    opt.step()
    if step % 20 == 0 or step == 59:
        print(f"step {step:3d} loss {float(loss.data):.5f}")
print("same Tensor/Adam machinery trains the tokenizer and transformer")
