"""
Gradients, masks and frozen parameters
======================================

A small conv net, its analytic gradient against central differences, and a
few masked SGD steps that leave everything outside the mask untouched.
"""
import numpy as np

from locunlearn.nn import OptimizerState, build_model, finite_diff_grad, loss_and_grads, masked_sgd_step

arch = {
    "input_shape": [1, 5, 5],
    "layers": [
        {"kind": "conv2d", "out_channels": 3, "kernel_size": 3, "padding": 1},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "out_features": 4},
    ],
}
model = build_model(arch, seed=0)
print(model)
print("neuron groups per layer:", [len(g) for g in model.neuron_table])

rng = np.random.default_rng(0)
x = rng.normal(size=(8, 1, 5, 5))
y = rng.integers(0, 4, 8)

# analytic vs numeric, in float64
_, g = loss_and_grads(model, x, y, dtype=np.float64)
fd = np.array([finite_diff_grad(model, x, y, j, 1e-4) for j in range(model.p)])
rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-7)
print(f"max relative gradient error over {model.p} params: {rel.max():.2e}")

# train only the first conv channel; the rest must not move
mask = np.zeros(model.p, dtype=bool)
a, b = model.neuron_table[0][0]
mask[a:b] = True
before = model.params.copy()
state = OptimizerState.zeros(model.p, momentum=0.9)
for step in range(20):
    loss, grads = loss_and_grads(model, x, y)
    masked_sgd_step(model, state, grads, mask, lr=0.1)
print(f"loss after 20 masked steps: {loss:.4f}")
print("changed inside mask :", int(np.sum(model.params[mask] != before[mask])), "of", int(mask.sum()))
print("changed outside mask:", int(np.sum(model.params[~mask] != before[~mask])))
