"""Forward pass, losses and reverse-mode gradients for :class:`Model`.

Computation runs in the dtype of the parameter vector handed to the
internal routines: float32 by default, float64 when a caller (e.g. the
finite-difference oracle) asks for it. Loss values are always reduced in
float64.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError, NumericOverflowError
from .model import Model

LOSS_KINDS = ("cross_entropy", "squared")


def _im2col(x, k, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c = x.shape[:2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # (N, C, Ho, Wo, k, k)
    ho, wo = win.shape[2:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(dcols, x_shape, k, pad, ho, wo):
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, ho, wo, c, k, k)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx


def _check_input(model: Model, x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == len(model.input_shape):
        x = x[None]
    if tuple(x.shape[1:]) != model.input_shape:
        raise DimensionError(
            f"batch features have shape {tuple(x.shape[1:])}, model expects {model.input_shape}"
        )
    return x


def _forward(model: Model, params: np.ndarray, x: np.ndarray, keep: bool):
    caches = []
    h = x.astype(params.dtype, copy=False)
    for layer_id, layer in enumerate(model.layers):
        if layer.kind == "dense":
            block = model.layer_block(layer_id, params)
            w = block[:, : layer.fan_in]
            out = h @ w.T
            if layer.has_bias:
                out += block[:, layer.fan_in]
            caches.append(h if keep else None)
            h = out
        elif layer.kind == "conv2d":
            block = model.layer_block(layer_id, params)
            w = block[:, : layer.fan_in]
            cols, ho, wo = _im2col(h, layer.kernel_size, layer.padding)
            out = cols @ w.T
            if layer.has_bias:
                out += block[:, layer.fan_in]
            caches.append((cols, h.shape, ho, wo) if keep else None)
            h = out.reshape(h.shape[0], ho, wo, layer.out_features).transpose(0, 3, 1, 2)
        elif layer.kind == "relu":
            caches.append(h > 0 if keep else None)
            h = np.maximum(h, 0)
        else:  # flatten
            caches.append(h.shape if keep else None)
            h = h.reshape(h.shape[0], -1)
    return h, caches


def _backward(model: Model, params: np.ndarray, caches, dout: np.ndarray) -> np.ndarray:
    grads = np.zeros_like(params)
    for layer_id in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[layer_id]
        cache = caches[layer_id]
        if layer.kind == "dense":
            block = model.layer_block(layer_id, params)
            gblock = model.layer_block(layer_id, grads)
            gblock[:, : layer.fan_in] = dout.T @ cache
            if layer.has_bias:
                gblock[:, layer.fan_in] = dout.sum(axis=0)
            if layer_id > 0:
                dout = dout @ block[:, : layer.fan_in]
        elif layer.kind == "conv2d":
            cols, x_shape, ho, wo = cache
            block = model.layer_block(layer_id, params)
            gblock = model.layer_block(layer_id, grads)
            d2 = dout.transpose(0, 2, 3, 1).reshape(-1, layer.out_features)
            gblock[:, : layer.fan_in] = d2.T @ cols
            if layer.has_bias:
                gblock[:, layer.fan_in] = d2.sum(axis=0)
            if layer_id > 0:
                dcols = d2 @ block[:, : layer.fan_in]
                dout = _col2im(dcols, x_shape, layer.kernel_size, layer.padding, ho, wo)
        elif layer.kind == "relu":
            dout = dout * cache
        else:
            dout = dout.reshape(cache)
    return grads


def _loss_and_dlogits(logits, y, loss_kind, need_grad=True):
    if not np.all(np.isfinite(logits)):
        raise NumericOverflowError("non-finite logits")
    n = logits.shape[0]
    z = logits.astype(np.float64)
    if loss_kind == "cross_entropy":
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            raise ConfigError("cross_entropy needs integer class labels")
        c = z.shape[1]
        if y.shape != (n,) or y.min() < 0 or y.max() >= c:
            raise ConfigError(f"labels must be a length-{n} vector in [0, {c})")
        z = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsum - z[np.arange(n), y]))
        if not need_grad:
            return loss, None
        probs = np.exp(z - logsum[:, None])
        probs[np.arange(n), y] -= 1.0
        return loss, probs / n
    if loss_kind == "squared":
        y = np.asarray(y)
        if np.issubdtype(y.dtype, np.integer):
            target = np.zeros_like(z)
            target[np.arange(n), y] = 1.0
        else:
            target = y.astype(np.float64).reshape(z.shape)
        diff = z - target
        loss = float(np.sum(diff**2) / n)
        return loss, (2.0 * diff / n if need_grad else None)
    raise ConfigError(f"unknown loss kind {loss_kind!r}")


def forward(model: Model, x, params=None) -> np.ndarray:
    """Logits for a batch of examples (a single example is promoted to a batch)."""
    x = _check_input(model, x)
    params = model.params if params is None else params
    logits, _ = _forward(model, params, x, keep=False)
    return logits


def predict(model: Model, x) -> np.ndarray:
    """Argmax class per example; ties go to the lowest class index."""
    return np.argmax(forward(model, x), axis=1)


def loss_value(model: Model, x, y, loss_kind="cross_entropy", l1_lambda=0.0, params=None) -> float:
    x = _check_input(model, x)
    if x.shape[0] == 0:
        raise ConfigError("empty batch")
    params = model.params if params is None else params
    logits, _ = _forward(model, params, x, keep=False)
    loss, _ = _loss_and_dlogits(logits, y, loss_kind, need_grad=False)
    if l1_lambda:
        loss += l1_lambda * float(np.abs(params.astype(np.float64)).sum())
    return loss


def loss_and_grads(
    model: Model,
    x,
    y,
    loss_kind: str = "cross_entropy",
    l1_lambda: float = 0.0,
    negate: bool = False,
    dtype=None,
):
    """Mean batch loss plus ``l1_lambda * ||params||_1`` and its gradient.

    Returns ``(loss, grads)`` with ``grads`` a float64 vector of length p.
    The L1 subgradient at zero is zero. With ``negate`` the gradient is
    sign-flipped (for ascent); the returned loss is not.
    """
    if l1_lambda < 0:
        raise ConfigError("l1_lambda must be >= 0")
    x = _check_input(model, x)
    if x.shape[0] == 0:
        raise ConfigError("empty batch")
    params = model.params if dtype is None else model.params.astype(dtype)
    logits, caches = _forward(model, params, x, keep=True)
    loss, dlogits = _loss_and_dlogits(logits, y, loss_kind)
    grads = _backward(model, params, caches, dlogits.astype(params.dtype)).astype(np.float64)
    if l1_lambda:
        p64 = params.astype(np.float64)
        loss += l1_lambda * float(np.abs(p64).sum())
        grads += l1_lambda * np.sign(p64)
    if not np.all(np.isfinite(grads)):
        raise NumericOverflowError("non-finite gradients")
    if negate:
        grads = -grads
    return loss, grads


def finite_diff_grad(
    model: Model, x, y, j: int, eps: float = 1e-4, loss_kind="cross_entropy", l1_lambda=0.0
) -> float:
    """Central-difference derivative of the loss w.r.t. parameter ``j`` (float64)."""
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    base = model.params.astype(np.float64)
    plus = base.copy()
    plus[j] += eps
    minus = base.copy()
    minus[j] -= eps
    lp = loss_value(model, x, y, loss_kind, l1_lambda, params=plus)
    lm = loss_value(model, x, y, loss_kind, l1_lambda, params=minus)
    return (lp - lm) / (2 * eps)
