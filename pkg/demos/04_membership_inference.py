"""
Membership inference on the forget set
======================================

An attacker learns seen/unseen from a retain subset (matched to the test
label histogram) versus the test set, then labels each forget example. The
MIA score is the fraction it calls unseen.
"""
import warnings

import numpy as np

from locunlearn.data import DataView, ForgetSpec, SyntheticSpec, make_split, make_synthetic, mia_calibration_subset, train_test_split
from locunlearn.evaluation import mia_from_features, mia_score
from locunlearn.nn import TrainRecipe, train_model
from locunlearn.unlearning import oracle_recipe, retrain_oracle

# a 1-d toy first: two forget examples sit on the unseen side
r = mia_from_features([0.9, 0.95], [0.2, 0.3], [0.25, 0.92, 0.1, 0.88])
print(f"toy: TN={r.tn} of {r.forget_size}, score {r.score}")

full = make_synthetic(SyntheticSpec(num_classes=8, dim=36, n=2000, seed=0, mean_scale=1.0,
                                    noise_scale=2.5, input_shape=(1, 6, 6)))
train, test = train_test_split(full, 0.3, seed=0)
split = make_split(train, ForgetSpec("non_iid", 0.1, (2, 5), seed=0))
calib = DataView(train, mia_calibration_subset(split.retain(), test, seed=0))

arch = {"input_shape": [1, 6, 6], "layers": [
    {"kind": "conv2d", "out_channels": 16, "kernel_size": 3}, {"kind": "relu"},
    {"kind": "flatten"}, {"kind": "dense", "out_features": 64}, {"kind": "relu"},
    {"kind": "dense", "out_features": 8}]}
recipe = TrainRecipe(epochs=30, lr=0.05, batch_size=64)
models = {
    "original": train_model(arch, DataView(train), recipe, seed=0),
    "oracle": retrain_oracle(split.retain(), arch, oracle_recipe(recipe), seed=1000),
}

print(f"\n{'model':>9s} {'feature':>12s} {'score':>6s} {'attacker acc':>12s}")
for name, m in models.items():
    for kind in ("correctness", "confidence"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = mia_score(m, calib, DataView(test), split.forget(), kind)
        print(f"{name:>9s} {kind:>12s} {r.score:6.3f} {r.attacker_train_acc:12.3f}")
