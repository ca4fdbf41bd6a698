"""Reference implementations used as test oracles.

Each one is written independently of the package code it checks: plain
Python loops, exhaustive enumeration or closed forms, no shared helpers.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from locunlearn.nn import LayerSpec, Model, forward


def floor_budget(alpha, p):
    return (Fraction(str(alpha)) * p).numerator // (Fraction(str(alpha)) * p).denominator


def dense_forward(weights, biases, x):
    """Hand matrix arithmetic for a dense/ReLU stack (ReLU between layers)."""
    h = [list(map(float, row)) for row in x]
    for li, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for row in h:
            z = [sum(w[o][i] * row[i] for i in range(len(row))) + b[o] for o in range(len(w))]
            if li < len(weights) - 1:
                z = [max(0.0, v) for v in z]
            out.append(z)
        h = out
    return np.array(h)


def greedy_subset_oracle(neurons, alpha, p):
    """Exhaustive search over neuron subsets.

    ``neurons`` is a list of (layer, neuron, score, count, start). A subset
    is admissible when it fits floor(alpha*p) and every chosen neuron
    outranks every unchosen one (score desc, then (layer, neuron) asc); the
    largest admissible subset is returned as a bit vector.
    """
    limit = floor_budget(alpha, p)
    n = len(neurons)

    def outranks(a, b):
        return (-a[2], a[0], a[1]) < (-b[2], b[0], b[1])

    best = ()
    for size in range(n, -1, -1):
        for subset in itertools.combinations(range(n), size):
            chosen = set(subset)
            if sum(neurons[i][3] for i in chosen) > limit:
                continue
            if all(outranks(neurons[i], neurons[j]) for i in chosen for j in range(n)
                   if j not in chosen):
                best = subset
                break
        else:
            continue
        break
    bits = np.zeros(p, dtype=bool)
    for i in best:
        bits[neurons[i][4] : neurons[i][4] + neurons[i][3]] = True
    return bits


def greedy_bitmask_oracle(neurons, alpha, p):
    """greedy_subset_oracle over all 2^n subsets at once, for n up to about 20."""
    limit = floor_budget(alpha, p)
    n = len(neurons)
    ranks = sorted(range(n), key=lambda i: (-neurons[i][2], neurons[i][0], neurons[i][1]))
    pos = [0] * n
    for r, i in enumerate(ranks):
        pos[i] = r
    subsets = np.arange(1 << n, dtype=np.int64)
    cost = np.zeros(subsets.size, dtype=np.int64)
    worst_in = np.full(subsets.size, -1)
    best_out = np.full(subsets.size, n)
    size = np.zeros(subsets.size, dtype=np.int64)
    for i in range(n):
        on = (subsets >> i) & 1 == 1
        cost += np.where(on, neurons[i][3], 0)
        size += on
        worst_in = np.where(on, np.maximum(worst_in, pos[i]), worst_in)
        best_out = np.where(on, best_out, np.minimum(best_out, pos[i]))
    ok = (cost <= limit) & (worst_in < best_out)
    pick = int(subsets[ok][np.argmax(size[ok])])
    bits = np.zeros(p, dtype=bool)
    for i in range(n):
        if (pick >> i) & 1:
            bits[neurons[i][4] : neurons[i][4] + neurons[i][3]] = True
    return bits


def greedy_prefix_oracle(neurons, alpha, p):
    """Same rule as greedy_subset_oracle, by walking the ranking (for n > 12)."""
    limit = floor_budget(alpha, p)
    ranked = sorted(neurons, key=lambda n: (-n[2], n[0], n[1]))
    bits = np.zeros(p, dtype=bool)
    used = 0
    for layer, neuron, score, count, start in ranked:
        if used + count > limit:
            break
        bits[start : start + count] = True
        used += count
    return bits


def exact_topk_oracle(values, alpha):
    """Top floor(alpha*p) entries of |values| by a full Python sort; ties to lower index."""
    p = len(values)
    k = floor_budget(alpha, p)
    order = sorted(range(p), key=lambda j: (-abs(float(values[j])), j))
    bits = np.zeros(p, dtype=bool)
    bits[order[:k]] = True
    return bits


def threshold_oracle_tn(seen, unseen, forget):
    """TN count of the best 1-d threshold classifier.

    Candidates are midpoints between consecutive distinct calibration values
    plus one point beyond each end, in both orientations. Fewest training
    errors wins; among those, the widest margin.
    """
    seen = np.asarray(seen, dtype=np.float64).ravel()
    unseen = np.asarray(unseen, dtype=np.float64).ravel()
    forget = np.asarray(forget, dtype=np.float64).ravel()
    vals = np.unique(np.concatenate([seen, unseen]))
    cands = np.concatenate([[vals[0] - 1], (vals[:-1] + vals[1:]) / 2, [vals[-1] + 1]])
    allv = np.concatenate([seen, unseen])
    best = None
    for t in cands:
        for d in (1, -1):
            err = int(np.sum(d * (seen - t) <= 0) + np.sum(d * (unseen - t) > 0))
            key = (err, -float(np.min(np.abs(allv - t))))
            if best is None or key < best[0]:
                best = (key, t, d)
    _, t, d = best
    return int(np.sum(d * (forget - t) <= 0))


def separable_fixture(rng):
    lo = rng.uniform(0.2, 0.7)
    gap = rng.uniform(0.1, 0.25)
    seen = rng.uniform(lo + gap, 1, rng.integers(2, 60))
    unseen = rng.uniform(0, lo, rng.integers(2, 60))
    forget = rng.uniform(0, 1, rng.integers(1, 40))
    return seen, unseen, forget


def t_interval(values):
    """Mean and 95% half-width with Student-t quantiles from a fixed table."""
    table = {1: 12.706204736, 2: 4.302652730, 3: 3.182446305, 4: 2.776445105}
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, table[n - 1] * (var / n) ** 0.5


def relu_patterns(model, x, params):
    """On/off pattern of every ReLU input, from forwards of truncated copies of the net."""
    out = []
    for k, layer in enumerate(model.layers):
        if layer.kind != "relu":
            continue
        head = list(model.layers[:k])
        try:
            sub = Model(head, model.input_shape)
        except Exception:
            sub = Model(head + [LayerSpec("flatten")], model.input_shape)
        out.append(forward(sub, x, params=params[: sub.p]) > 0)
    return out


def kink_free(model, x, eps):
    """True when no coordinate step of +-eps changes any ReLU's on/off state.

    Central differences are only a valid derivative oracle on such fixtures.
    """
    base = model.params.astype(np.float64)
    ref = relu_patterns(model, x, base)
    for j in range(model.p):
        for sign in (1, -1):
            q = base.copy()
            q[j] += sign * eps
            if any(not np.array_equal(a, b) for a, b in zip(ref, relu_patterns(model, x, q))):
                return False
    return True
