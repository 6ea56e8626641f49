"""2-D convolution (cross-correlation) and its transpose.

Three numpy kernels do all the work: ``correlate`` (forward), ``correlate_input_grad``
(adjoint w.r.t. the input, which is also the transposed convolution) and
``correlate_weight_grad``. Layouts are NCHW for activations and FCkk for weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DimensionError, Tensor, as_tensor


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1 or self.dilation < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")

    def out_extent(self, n: int, k: int) -> int:
        return (n + 2 * self.padding - self.dilation * (k - 1) - 1) // self.stride + 1

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        return self.out_extent(h, self.kernel_h), self.out_extent(w, self.kernel_w)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, oh: int, ow: int) -> np.ndarray:
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    return win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride, ::dilation, ::dilation]


def _check(x_shape, w_shape, spec: ConvSpec) -> tuple[int, int]:
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise DimensionError(f"conv2d expects NCHW input and FCkk weight, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x_shape} vs weight {w_shape}")
    oh, ow = spec.output_shape(x_shape[2], x_shape[3])
    if oh < 1 or ow < 1:
        raise DimensionError(f"kernel {w_shape[2:]} (dilation {spec.dilation}) larger than padded input {x_shape[2:]}")
    return oh, ow


def correlate(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    oh, ow = _check(x.shape, w.shape, spec)
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = _windows(xp, w.shape[2], w.shape[3], spec.stride, spec.dilation, oh, ow)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, oh, ow, F
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def correlate_input_grad(g: np.ndarray, w: np.ndarray, spec: ConvSpec, in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of ``correlate`` w.r.t. its input, for an input of extent ``in_hw``."""
    n, f, oh, ow = g.shape
    _, c, kh, kw = w.shape
    s, d, p = spec.stride, spec.dilation, spec.padding
    h, wd = in_hw
    # contributions per kernel tap: N, oh, ow, C, kh, kw
    cols = np.tensordot(g.transpose(0, 2, 3, 1), w, axes=([3], [0]))
    hp = max(h + 2 * p, (oh - 1) * s + d * (kh - 1) + 1)
    wp = max(wd + 2 * p, (ow - 1) * s + d * (kw - 1) + 1)
    out = np.zeros((n, hp, wp, c), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i * d : i * d + (oh - 1) * s + 1 : s, j * d : j * d + (ow - 1) * s + 1 : s, :] += cols[..., i, j]
    out = out[:, p : p + h, p : p + wd, :]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def correlate_weight_grad(x: np.ndarray, g: np.ndarray, spec: ConvSpec, k_hw: tuple[int, int]) -> np.ndarray:
    kh, kw = k_hw
    oh, ow = g.shape[2], g.shape[3]
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = _windows(xp, kh, kw, spec.stride, spec.dilation, oh, ow)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # F, C, kh, kw


def _spec_for(w: Tensor, stride: int, padding: int, dilation: int) -> ConvSpec:
    return ConvSpec(w.shape[2], w.shape[3], stride, padding, dilation)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """Cross-correlation with zero padding. ``x``: N×C×H×W, ``w``: F×C×kh×kw."""
    x, w = as_tensor(x), as_tensor(w)
    spec = _spec_for(w, stride, padding, dilation)
    xd, wd = x.data, w.data
    in_hw = xd.shape[2:]

    def back(g):
        return correlate_input_grad(g, wd, spec, in_hw), correlate_weight_grad(xd, g, spec, wd.shape[2:])

    out = Tensor._make(correlate(xd, wd, spec), (x, w), back)
    if bias is not None:
        out = out + as_tensor(bias).reshape(1, -1, 1, 1)
    return out


def transposed_out_extent(n: int, k: int, stride: int, padding: int, output_padding: int = 0,
                          dilation: int = 1) -> int:
    return (n - 1) * stride - 2 * padding + dilation * (k - 1) + output_padding + 1


def conv_transpose2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
                     output_padding: int = 0, dilation: int = 1, output_size: tuple[int, int] | None = None) -> Tensor:
    """Transposed convolution. ``x``: N×Cin×H×W, ``w``: Cin×Cout×kh×kw.

    This is the adjoint of ``conv2d`` with the same weight, stride, padding and
    dilation; ``output_padding`` (or an explicit ``output_size``) selects the
    output extent among those that map back to the input extent.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv_transpose2d expects NCHW input and CinCoutkk weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"conv_transpose2d channel mismatch: input {x.shape} vs weight {w.shape}")
    spec = _spec_for(w, stride, padding, dilation)
    kh, kw = w.shape[2:]
    if output_size is None:
        output_size = (transposed_out_extent(x.shape[2], kh, stride, padding, output_padding, dilation),
                       transposed_out_extent(x.shape[3], kw, stride, padding, output_padding, dilation))
    if output_size[0] < 1 or output_size[1] < 1 or spec.output_shape(*output_size) != x.shape[2:]:
        raise DimensionError(f"output size {output_size} is inconsistent with input {x.shape} and kernel {w.shape}")
    xd, wd = x.data, w.data

    def back(g):
        return correlate(g, wd, spec), correlate_weight_grad(g, xd, spec, (kh, kw))

    out = Tensor._make(correlate_input_grad(xd, wd, spec, tuple(output_size)), (x, w), back)
    if bias is not None:
        out = out + as_tensor(bias).reshape(1, -1, 1, 1)
    return out
