"""
Reset, finetune, compare with retraining
========================================

The original model has seen the forget set; the oracle was retrained without
it. DEL resets its critical channels and finetunes them (plus the classifier)
on the retain set. We compare accuracies against the oracle.
"""
import numpy as np

from locunlearn.data import DataView, ForgetSpec, SyntheticSpec, make_split, make_synthetic, train_test_split
from locunlearn.evaluation import accuracy
from locunlearn.localization import del_mask, random_matched_mask
from locunlearn.nn import TrainRecipe, train_model
from locunlearn.unlearning import UnlearnConfig, finetune, oracle_recipe, reset_finetune, retrain_oracle

full = make_synthetic(SyntheticSpec(num_classes=8, dim=36, n=2000, seed=0, mean_scale=1.0,
                                    noise_scale=2.5, input_shape=(1, 6, 6)))
train, test = train_test_split(full, 0.3, seed=0)
split = make_split(train, ForgetSpec("non_iid", 0.1, (2, 5), seed=0))
retain, forget, test = split.retain(), split.forget(), DataView(test)

arch = {"input_shape": [1, 6, 6], "layers": [
    {"kind": "conv2d", "out_channels": 16, "kernel_size": 3}, {"kind": "relu"},
    {"kind": "flatten"}, {"kind": "dense", "out_features": 64}, {"kind": "relu"},
    {"kind": "dense", "out_features": 8}]}
recipe = TrainRecipe(epochs=30, lr=0.05, batch_size=64)
original = train_model(arch, DataView(train), recipe, seed=0)
oracle = retrain_oracle(retain, arch, oracle_recipe(recipe), seed=1000)

cfg = UnlearnConfig("rft", epochs=10, lr=0.05, batch_size=64)
mask = del_mask(original, forget, 0.16)
runs = {
    "original": original,
    "oracle": oracle,
    "finetune": finetune(original, None, retain, UnlearnConfig("finetune", epochs=10, lr=0.02,
                                                               batch_size=64)).model,
    "DEL (rft)": reset_finetune(original, mask, retain, cfg).model,
    "random+rft": reset_finetune(original, random_matched_mask(mask, original, "channel", 0),
                                 retain, cfg).model,
}

print(f"{'model':>12s} {'forget':>7s} {'retain':>7s} {'test':>7s} {'dF':>7s}")
o_f = accuracy(oracle, forget)
for name, m in runs.items():
    f, r, t = accuracy(m, forget), accuracy(m, retain), accuracy(m, test)
    print(f"{name:>12s} {f:7.3f} {r:7.3f} {t:7.3f} {100 * (o_f - f):7.2f}")

# the body outside the mask is untouched; only mask + classifier moved
moved = runs["DEL (rft)"].params != original.params
allowed = mask.bits | original.classifier_bits()
print("\nparameters changed outside mask + classifier:", int(np.sum(moved & ~allowed)))
