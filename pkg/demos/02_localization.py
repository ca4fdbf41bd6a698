"""
Where does the forget set live?
===============================

Train a model on Gaussian classes, take half of two classes as the forget
set, and compare what each localization strategy selects at the same budget.
"""
import numpy as np

from locunlearn.data import DataView, ForgetSpec, SyntheticSpec, make_split, make_synthetic
from locunlearn.localization import (
    critmem_mask,
    del_mask,
    layer_mask_for_budget,
    random_matched_mask,
    salloc_mask,
)
from locunlearn.nn import TrainRecipe, train_model

data = make_synthetic(SyntheticSpec(num_classes=8, dim=36, n=1200, seed=0, mean_scale=1.0,
                                    noise_scale=2.5, input_shape=(1, 6, 6)))
split = make_split(data, ForgetSpec("non_iid", 0.1, (2, 5), seed=0))
print(f"{len(split.forget_indices)} forget examples, {len(split.retain_indices)} retain")

arch = {"input_shape": [1, 6, 6], "layers": [
    {"kind": "conv2d", "out_channels": 16, "kernel_size": 3}, {"kind": "relu"},
    {"kind": "flatten"}, {"kind": "dense", "out_features": 64}, {"kind": "relu"},
    {"kind": "dense", "out_features": 8}]}
model = train_model(arch, DataView(data), TrainRecipe(epochs=20, lr=0.05, batch_size=64), seed=0)

alpha = 0.16
forget = split.forget()
masks = {
    "del": del_mask(model, forget, alpha),
    "salloc": salloc_mask(model, forget, alpha),
    "critmem": critmem_mask(model, forget, alpha=alpha),
    "deepest": layer_mask_for_budget(model, alpha, "deepest"),
    "shallowest": layer_mask_for_budget(model, alpha, "shallowest"),
}
masks["random(del)"] = random_matched_mask(masks["del"], model, "channel", seed=0)

print(f"\nbudget floor({alpha} * {model.p}) = {int(alpha * model.p)} parameters")
print(f"{'strategy':>12s} {'selected':>8s}  per-layer")
for name, m in masks.items():
    print(f"{name:>12s} {m.popcount:8d}  {m.layer_counts(model)}")

# DEL and its random control share per-layer counts but not positions
d, r = masks["del"].bits, masks["random(del)"].bits
print(f"\nDEL vs random(DEL) overlap: {np.sum(d & r)} of {d.sum()} parameters")
print(f"DEL vs SalLoc overlap:      {np.sum(d & masks['salloc'].bits)}")
