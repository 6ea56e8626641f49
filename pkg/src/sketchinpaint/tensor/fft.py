"""Differentiable 2-D Fourier transforms over the last two axes.

Complex results are carried as real tensors with a trailing axis of length 2
holding (real, imag). Forward transforms are unnormalized; inverses scale by
1/(H·W).
"""
from __future__ import annotations

import numpy as np

from .core import DimensionError, Tensor, as_tensor


def _to_complex(z: np.ndarray) -> np.ndarray:
    return z[..., 0] + 1j * z[..., 1]


def _from_complex(c: np.ndarray, dtype) -> np.ndarray:
    return np.stack([c.real, c.imag], axis=-1).astype(dtype, copy=False)


def dft2_naive(x: np.ndarray) -> np.ndarray:
    """O((HW)^2) reference DFT over the last two axes, complex result."""
    h, w = x.shape[-2:]
    ky = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    kx = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    out = np.zeros(x.shape, dtype=complex)
    for u in range(h):
        for v in range(w):
            out[..., u, v] = (x * np.outer(ky[u], kx[v])).sum(axis=(-2, -1))
    return out


def fft2(x: Tensor) -> Tensor:
    """Real input ``…×H×W`` → complex spectrum ``…×H×W×2``."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"fft2 needs at least 2 axes, got {x.shape}")
    h, w = x.shape[-2:]
    dtype = x.dtype

    def back(g):
        # adjoint of the DFT is H·W times the inverse DFT; keep the real part
        return (np.real(np.fft.ifft2(_to_complex(g))) * (h * w)).astype(dtype),

    return Tensor._make(_from_complex(np.fft.fft2(x.data), dtype), (x,), back)


def ifft2(z: Tensor) -> Tensor:
    """Complex ``…×H×W×2`` → complex ``…×H×W×2``, scaled by 1/(H·W)."""
    z = as_tensor(z)
    if z.ndim < 3 or z.shape[-1] != 2:
        raise DimensionError(f"ifft2 expects a trailing (re, im) axis, got {z.shape}")
    h, w = z.shape[-3:-1]
    dtype = z.dtype

    def back(g):
        return _from_complex(np.fft.fft2(_to_complex(g)) / (h * w), dtype),

    return Tensor._make(_from_complex(np.fft.ifft2(_to_complex(z.data)), dtype), (z,), back)


def rfft2(x: Tensor) -> Tensor:
    """Real ``…×H×W`` → half spectrum ``…×H×(W//2+1)×2``."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    dtype = x.dtype

    def back(g):
        full = np.zeros(g.shape[:-2] + (w,), dtype=complex)
        full[..., : w // 2 + 1] = _to_complex(g)
        return (np.real(np.fft.ifft2(full)) * (h * w)).astype(dtype),

    return Tensor._make(_from_complex(np.fft.rfft2(x.data), dtype), (x,), back)


def irfft2(z: Tensor, shape: tuple[int, int]) -> Tensor:
    """Half spectrum ``…×H×(W//2+1)×2`` → real ``…×H×W`` (Hermitian extension)."""
    z = as_tensor(z)
    h, w = shape
    if z.shape[-3:] != (h, w // 2 + 1, 2):
        raise DimensionError(f"irfft2 spectrum {z.shape} does not match output size {shape}")
    dtype = z.dtype
    # interior columns appear twice in the Hermitian extension
    weight = np.full(w // 2 + 1, 2.0)
    weight[0] = 1.0
    if w % 2 == 0:
        weight[-1] = 1.0

    def back(g):
        return _from_complex(np.fft.rfft2(g) * weight / (h * w), dtype),

    return Tensor._make(np.fft.irfft2(_to_complex(z.data), s=(h, w)).astype(dtype), (z,), back)
