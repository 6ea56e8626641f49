"""Activations, normalizations and other composite differentiable functions."""
from __future__ import annotations

import math

import numpy as np

from .core import ContractError, Tensor, as_tensor


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor._make(np.where(pos, x.data, 0).astype(x.dtype), (x,),
                        lambda g: (np.where(pos, g, 0).astype(g.dtype),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split on sign so exp never overflows
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._make(y, (x,), lambda g: (g * y * (1 - y),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), stable for large |x|; the gradient is sigmoid(x)."""
    x = as_tensor(x)
    v = x.data
    y = (np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))).astype(x.dtype)
    e = np.exp(-np.abs(v))
    sig = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return Tensor._make(y, (x,), lambda g: (g * sig,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1 - y * y),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    t = np.tanh(inner)
    y = 0.5 * v * (1 + t)

    def back(g):
        d_inner = _GELU_C * (1 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * v * (1 - t * t) * d_inner)).astype(g.dtype),

    return Tensor._make(y.astype(x.dtype), (x,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return Tensor._make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return Tensor._make(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layernorm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, axis: int = -1,
              eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"layernorm axis {axis} invalid for shape {x.shape}")
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    y = xc / (var + eps).sqrt()
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def batchnorm2d(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray, weight: Tensor | None,
                bias: Tensor | None, training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over N, H, W of an N×C×H×W tensor.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, like the usual convention); otherwise
    the running statistics are used.
    """
    x = as_tensor(x)
    axes = (0, 2, 3)
    if training:
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        n = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * var.data.reshape(-1) * (n / max(n - 1, 1))
        y = xc / (var + eps).sqrt()
    else:
        mu = running_mean.reshape(1, -1, 1, 1).astype(x.dtype)
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(1, -1, 1, 1).astype(x.dtype)
        y = (x - mu) * inv
    if weight is not None:
        y = y * weight.reshape(1, -1, 1, 1)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y


def resize_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resampling of the last two axes (differentiable gather)."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    rows = nearest_index(h, size[0])
    cols = nearest_index(w, size[1])
    if size == (h, w):
        return x
    return x[..., rows[:, None], cols[None, :]]


def nearest_index(src: int, dst: int) -> np.ndarray:
    """Source index for each destination cell (floor(i·src/dst))."""
    return (np.arange(dst) * src // dst).astype(np.int64)


def bce(pred: Tensor, target, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy of probabilities ``pred`` against ``target``."""
    pred = as_tensor(pred)
    t = as_tensor(target, dtype=pred.dtype)
    p = pred.clamp(eps, 1 - eps)
    return -(t * p.log() + (1 - t) * (1 - p).log()).mean()


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean BCE computed stably from logits."""
    logits = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=logits.dtype)
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def back(g):
        e = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
        return (g * (sig - t) / n).astype(z.dtype),

    return Tensor._make(np.asarray(loss.mean(), dtype=z.dtype), (logits,), back)
