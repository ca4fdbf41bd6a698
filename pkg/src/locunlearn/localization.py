"""Criticality scoring and budgeted parameter masks for localized unlearning.

Strategies:

* ``criticality_scores`` + ``build_mask``: score parameters, aggregate per
  neuron/channel with a top-h mean, and greedily take whole neurons under a
  parameter budget. With the weighted-gradient-on-forget criterion this is
  the DEL localization.
* ``salloc_mask``: top fraction of individual parameters by |gradient|.
* ``layer_mask``: k deepest or shallowest parameterized layers.
* ``critmem_mask``: per-example iterative channel zeroing until the
  prediction flips.
* ``random_matched_mask``: random control with the same per-layer counts as
  a reference mask.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, ParseError
from .nn import Model, loss_and_grads, predict

DEFAULT_H = 10
DEFAULT_BATCH_SIZE = 128


class Criterion(str, Enum):
    GRAD_FORGET = "grad_forget"
    WEIGHTS_ONLY = "weights_only"
    WEIGHTED_GRAD_TRAIN = "weighted_grad_train"
    WEIGHTED_GRAD_FORGET = "weighted_grad_forget"

    @property
    def uses_data(self) -> bool:
        return self is not Criterion.WEIGHTS_ONLY

    @property
    def weighted(self) -> bool:
        return self in (Criterion.WEIGHTED_GRAD_TRAIN, Criterion.WEIGHTED_GRAD_FORGET)


class NeuronScore(NamedTuple):
    layer: int
    neuron: int
    score: float
    param_count: int
    start: int


@dataclass
class CriticalityScores:
    param_scores: np.ndarray
    neuron_scores: list
    h: int
    criterion: Criterion


@dataclass
class Mask:
    bits: np.ndarray
    alpha: float
    strategy_tag: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)

    @property
    def p(self) -> int:
        return self.bits.shape[0]

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def layer_counts(self, model: Model) -> list:
        return [int(self.bits[a:b].sum()) for a, b in model.layer_offsets]

    def to_index_text(self) -> str:
        return "\n".join(str(i) for i in np.flatnonzero(self.bits)) + "\n"


def budget(alpha: float, p: int) -> int:
    """floor(alpha * p), evaluated on the decimal value of alpha."""
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    return int(Fraction(repr(float(alpha))) * p)


# ------------------------------------------------------------------ scoring


def accumulate_grads(model: Model, view, batch_size: int = DEFAULT_BATCH_SIZE, weighted=False):
    """Signed sum over mini-batches of g_j (or theta_j * g_j), in float64.

    Batches are taken in view order so the result is deterministic.
    """
    if len(view) == 0:
        raise ConfigError("cannot score parameters on an empty data view")
    theta = model.params.astype(np.float64)
    total = np.zeros(model.p, dtype=np.float64)
    for x, y in view.batches(batch_size, seed=0, shuffle=False):
        _, g = loss_and_grads(model, x, y)
        total += theta * g if weighted else g
    return total


def neuron_topk_avg(scores, h: int) -> float:
    """Mean of the first ``min(h, len(scores))`` entries of a descending list."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ConfigError("empty score list")
    if h < 1:
        raise ConfigError("h must be >= 1")
    return float(scores[: min(h, scores.size)].mean())


def neuron_scores_from(model: Model, param_scores: np.ndarray, h: int) -> list:
    out = []
    for layer, neuron, start, stop in model.neurons():
        ranked = np.sort(param_scores[start:stop])[::-1]
        out.append(NeuronScore(layer, neuron, neuron_topk_avg(ranked, h), stop - start, start))
    return out


def criticality_scores(
    model: Model,
    data=None,
    criterion: Criterion | str = Criterion.WEIGHTED_GRAD_FORGET,
    h: int = DEFAULT_H,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> CriticalityScores:
    """Per-parameter and per-neuron criticality.

    Gradient criteria sum signed per-batch terms first and take the absolute
    value once at the end, so opposite-signed batches can cancel.
    """
    criterion = Criterion(criterion)
    if h < 1:
        raise ConfigError("h must be >= 1")
    if criterion.uses_data:
        if data is None or len(data) == 0:
            raise ConfigError(f"criterion {criterion.value} needs a non-empty data view")
        scores = np.abs(accumulate_grads(model, data, batch_size, weighted=criterion.weighted))
    else:
        scores = np.abs(model.params.astype(np.float64))
    return CriticalityScores(scores, neuron_scores_from(model, scores, h), h, criterion)


# ------------------------------------------------------------------ masks


def build_mask(scores: CriticalityScores, alpha: float, p: int, tag: str = "del") -> Mask:
    """Greedy whole-neuron selection in descending score order under floor(alpha*p).

    Ties go to the lower (layer, neuron). Selection stops at the first
    neuron that would overflow the budget.
    """
    limit = budget(alpha, p)
    order = sorted(scores.neuron_scores, key=lambda n: (-n.score, n.layer, n.neuron))
    bits = np.zeros(p, dtype=bool)
    used = 0
    for n in order:
        if used + n.param_count > limit:
            break
        bits[n.start : n.start + n.param_count] = True
        used += n.param_count
    return Mask(bits, alpha, tag)


def top_params_mask(param_scores: np.ndarray, alpha: float, tag: str) -> Mask:
    p = param_scores.shape[0]
    k = budget(alpha, p)
    order = np.argsort(-param_scores, kind="stable")
    bits = np.zeros(p, dtype=bool)
    bits[order[:k]] = True
    return Mask(bits, alpha, tag)


def del_mask(model: Model, forget, alpha: float, h: int = DEFAULT_H,
             batch_size: int = DEFAULT_BATCH_SIZE) -> Mask:
    scores = criticality_scores(model, forget, Criterion.WEIGHTED_GRAD_FORGET, h, batch_size)
    return build_mask(scores, alpha, model.p, "del")


def salloc_mask(model: Model, forget, alpha: float, batch_size: int = DEFAULT_BATCH_SIZE) -> Mask:
    """Top ``floor(alpha*p)`` parameters by |gradient summed over one pass of S|."""
    if forget is None or len(forget) == 0:
        raise ConfigError("salloc needs a non-empty forget set")
    scores = np.abs(accumulate_grads(model, forget, batch_size))
    return top_params_mask(scores, alpha, "salloc")


def criterion_mask(model: Model, data, alpha: float, criterion, granularity: str,
                   h: int = DEFAULT_H, batch_size: int = DEFAULT_BATCH_SIZE) -> Mask:
    """Any criterion at channel or parameter granularity (the ablation grid)."""
    criterion = Criterion(criterion)
    scores = criticality_scores(model, data, criterion, h, batch_size)
    tag = f"{criterion.value}/{granularity}"
    if granularity == "channel":
        return build_mask(scores, alpha, model.p, tag)
    if granularity == "parameter":
        return top_params_mask(scores.param_scores, alpha, tag)
    raise ConfigError(f"unknown granularity {granularity!r}")


def layer_mask(model: Model, k: int, end: str) -> Mask:
    """All parameters of the k parameterized layers nearest the output or input."""
    ids = list(model.param_layer_ids)
    if not 1 <= k <= len(ids):
        raise ConfigError(f"k must be in [1, {len(ids)}], got {k}")
    if end == "deepest":
        chosen = ids[-k:]
    elif end == "shallowest":
        chosen = ids[:k]
    else:
        raise ConfigError(f"end must be 'deepest' or 'shallowest', got {end!r}")
    bits = np.zeros(model.p, dtype=bool)
    for i in chosen:
        a, b = model.layer_offsets[i]
        bits[a:b] = True
    return Mask(bits, bits.sum() / model.p, f"{end}-k{k}")


def layer_mask_for_budget(model: Model, alpha: float, end: str) -> Mask:
    """Largest k whose layers fit in floor(alpha*p); empty mask if none fit."""
    limit = budget(alpha, model.p)
    best = Mask(np.zeros(model.p, dtype=bool), alpha, f"{end}-k0")
    for k in range(1, len(model.param_layer_ids) + 1):
        m = layer_mask(model, k, end)
        if m.popcount > limit:
            break
        best = Mask(m.bits, alpha, m.strategy_tag)
    return best


# ------------------------------------------------------------------ CritMem


@dataclass
class CritMemTrace:
    channels: list  # neuron ids (flat order) zeroed for this example
    flipped: bool
    exhausted: bool


def _flat_neurons(model: Model):
    return [(start, stop) for _, _, start, stop in model.neurons()]


def critmem_example(model: Model, x, y, max_channels: int, groups=None) -> CritMemTrace:
    """Zero the most critical channel of a scratch copy until ``x`` is misclassified."""
    groups = _flat_neurons(model) if groups is None else groups
    max_channels = min(max_channels, len(groups))
    scratch = model.copy()
    reset = []
    seg_starts = np.array([a for a, _ in groups])
    while True:
        if predict(scratch, x)[0] != y:
            return CritMemTrace(reset, True, False)
        if len(reset) >= max_channels:
            return CritMemTrace(reset, False, True)
        _, g = loss_and_grads(scratch, x[None], np.array([y]))
        contrib = np.abs(scratch.params.astype(np.float64) * g)
        per_channel = np.add.reduceat(contrib, seg_starts)
        per_channel[reset] = -np.inf
        best = int(np.argmax(per_channel))
        a, b = groups[best]
        scratch.params[a:b] = 0.0
        reset.append(best)


def critmem_mask(model: Model, forget, max_channels_per_example: int | None = None,
                 alpha: float | None = None) -> Mask:
    """Union of the channels CritMem zeroes for each forget example.

    ``max_channels_per_example`` defaults to 5% of all channels (at least 1).
    If ``alpha`` is given the union is capped at floor(alpha*p) parameters:
    channels are added in discovery order and the first one that would
    overflow stops the accumulation.
    """
    groups = _flat_neurons(model)
    if max_channels_per_example is None:
        max_channels_per_example = max(1, int(0.05 * len(groups)))
    x_all, y_all = forget.take()
    traces = [critmem_example(model, x, int(y), max_channels_per_example, groups)
              for x, y in zip(x_all, y_all)]
    limit = model.p if alpha is None else budget(alpha, model.p)
    bits = np.zeros(model.p, dtype=bool)
    used = 0
    capped = False
    for t in traces:
        for ch in t.channels:
            a, b = groups[ch]
            if bits[a]:
                continue
            if used + (b - a) > limit:
                capped = True
                break
            bits[a:b] = True
            used += b - a
        if capped:
            break
    info = {
        "flipped": sum(t.flipped for t in traces),
        "exhausted": sum(t.exhausted for t in traces),
        "capped": capped,
    }
    return Mask(bits, used / model.p if alpha is None else alpha, "critmem", info)


# ------------------------------------------------------------------ random control


def _group_aligned(bits: np.ndarray, groups) -> bool:
    return all(bits[a:b].all() or not bits[a:b].any() for a, b in groups)


def random_matched_mask(reference: Mask, model: Model, granularity: str, seed: int) -> Mask:
    """Per layer, pick as many random channels (or parameters) as ``reference`` does."""
    if reference.p != model.p:
        raise DimensionError("reference mask length differs from model p")
    rng = np.random.default_rng(seed)
    bits = np.zeros(model.p, dtype=bool)
    for layer_id, (a, b) in enumerate(model.layer_offsets):
        if a == b:
            continue
        ref = reference.bits[a:b]
        if granularity == "channel":
            groups = model.neuron_table[layer_id]
            if not _group_aligned(reference.bits, groups):
                raise ConfigError(f"reference mask is not channel-aligned in layer {layer_id}")
            count = sum(int(reference.bits[s]) for s, _ in groups)
            for g in rng.choice(len(groups), size=count, replace=False):
                s, e = groups[g]
                bits[s:e] = True
        elif granularity == "parameter":
            count = int(ref.sum())
            bits[a + rng.choice(b - a, size=count, replace=False)] = True
        else:
            raise ConfigError(f"unknown granularity {granularity!r}")
    return Mask(bits, reference.alpha, f"random/{reference.strategy_tag}/{granularity}")


# ------------------------------------------------------------------ persistence


def save_mask(path, mask: Mask) -> None:
    header = {"p": mask.p, "alpha": mask.alpha, "strategy_tag": mask.strategy_tag,
              "popcount": mask.popcount}
    payload = np.packbits(mask.bits, bitorder="little").tobytes()
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(line + b"\n" + payload)


def load_mask(path) -> Mask:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError("mask header not terminated", offset=len(raw))
    header = json.loads(raw[:nl])
    p = header["p"]
    payload = raw[nl + 1 :]
    if len(payload) != (p + 7) // 8:
        raise ParseError(f"mask payload has {len(payload)} bytes for p={p}", offset=nl + 1)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=p, bitorder="little")
    mask = Mask(bits.astype(bool), header["alpha"], header["strategy_tag"])
    if mask.popcount != header["popcount"]:
        raise ParseError("mask popcount does not match header", offset=0)
    return mask
