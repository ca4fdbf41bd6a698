"""
Budget sweep and the two control experiments
============================================

Runs the desk configuration end to end (train, tune lr per cell, unlearn,
evaluate) and prints the random-mask control and the criterion ablation.
The same run is available as ``locunlearn sweep --config configs/desk_noniid.yaml``.
"""
import json
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from locunlearn import harness
from locunlearn.config import load_config

config = load_config(Path(__file__).resolve().parents[1] / "configs" / "desk_noniid.yaml")
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="locunlearn-")
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    res = harness.cmd_sweep(config, out)
root = res["root"]
deltas = json.loads((root / "deltas.json").read_text())


def abs_forget(key):
    return np.array([abs(v["forget"]) for v in deltas[key]["per_seed"].values()])


print(f"{'alpha':>6s} " + " ".join(f"{s.name:>22s}" for s in config.strategies if s.kind != "full"))
for alpha in config.strategy("del").alphas:
    cells = [abs_forget(f"{s.name}/rft/{alpha:g}").mean()
             for s in config.strategies if s.kind != "full"]
    print(f"{alpha:6g} " + " ".join(f"{c:22.2f}" for c in cells))
print(f"{'full':>6s} {abs_forget('full/rft/1').mean():22.2f}")

d, r = abs_forget("del/rft/0.16"), abs_forget("random_del/rft/0.16")
print(f"\nalpha=0.16 mean |dF|: DEL {d.mean():.2f}, random {r.mean():.2f}, "
      f"per-seed gaps {np.round(r - d, 2).tolist()}")
print(f"outputs in {root}")
