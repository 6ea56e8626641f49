"""Masking positional encoding.

Masks use 1 for masked (to be filled) and 0 for known pixels. For every masked
pixel we compute its chessboard distance to the nearest known pixel, encode it
sinusoidally, and add a learned embedding of the cardinal direction(s) in
which the nearest known pixel lies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, stack
from .tensor.functional import nearest_index

UP, DOWN, LEFT, RIGHT = range(4)


@dataclass(frozen=True)
class MPEConfig:
    d_max: int = 128
    d: int = 64

    def __post_init__(self):
        if self.d % 2:
            raise ValueError(f"encoding width d must be even, got {self.d}")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")


def _check_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.size == 0:
        raise DimensionError(f"mask must be a non-empty H×W grid, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be 0 (known) or 1 (masked)")
    return m.astype(bool)


def _running_min_plus_index(a: np.ndarray) -> np.ndarray:
    """out[x] = min over j <= x of a[j] + (x - j), along the last axis."""
    idx = np.arange(a.shape[-1])
    return np.minimum.accumulate(a - idx, axis=-1) + idx


def masking_distance(mask) -> np.ndarray:
    """Chessboard distance from each masked pixel to the nearest known pixel.

    Two raster sweeps with the 8-neighbour unit chamfer mask; rows are
    processed as vectors with the in-row neighbour handled by a running
    minimum. Known pixels get 0. If there are no known pixels at all the map is
    all zeros (callers decide how to encode that case).
    """
    m = _check_mask(mask)
    h, w = m.shape
    if m.all():
        return np.zeros((h, w), dtype=np.int64)
    big = h + w + 2
    d = np.where(m, big, 0).astype(np.int64)
    for y in range(h):
        row = d[y]
        if y > 0:
            prev = d[y - 1]
            row = np.minimum(row, prev + 1)
            row[1:] = np.minimum(row[1:], prev[:-1] + 1)
            row[:-1] = np.minimum(row[:-1], prev[1:] + 1)
        d[y] = _running_min_plus_index(row)
    for y in range(h - 1, -1, -1):
        row = d[y]
        if y < h - 1:
            nxt = d[y + 1]
            row = np.minimum(row, nxt + 1)
            row[1:] = np.minimum(row[1:], nxt[:-1] + 1)
            row[:-1] = np.minimum(row[:-1], nxt[1:] + 1)
        d[y] = _running_min_plus_index(row[::-1])[::-1]
    return d


def _steps_back_to_known(known: np.ndarray) -> np.ndarray:
    """Along axis 1: steps back to the most recent known cell (0 on known, inf if none)."""
    pos = np.arange(known.shape[1])[None, :]
    last = np.maximum.accumulate(np.where(known, pos, -1), axis=1)
    return np.where(last >= 0, pos - last, np.inf)


def _ray_lengths(m: np.ndarray) -> np.ndarray:
    """H×W×4 steps to the nearest known pixel going up/down/left/right (inf if none)."""
    known = ~m
    out = np.empty(m.shape + (4,))
    out[..., LEFT] = _steps_back_to_known(known)
    out[..., RIGHT] = _steps_back_to_known(known[:, ::-1])[:, ::-1]
    out[..., UP] = _steps_back_to_known(known.T).T
    out[..., DOWN] = _steps_back_to_known(known.T[:, ::-1])[:, ::-1].T
    return out


def masking_direction(mask) -> np.ndarray:
    """Multi-label H×W×4 bits (up, down, left, right) of the nearest cardinal known pixel."""
    m = _check_mask(mask)
    rays = _ray_lengths(m)
    best = rays.min(axis=-1, keepdims=True)
    bits = (rays == best) & np.isfinite(rays)
    bits[~m] = False
    return bits.astype(np.uint8)


def sinusoidal_encode(dist, cfg: MPEConfig = MPEConfig()) -> np.ndarray:
    """H×W distances → H×W×d encoding with sin/cos pairs on clipped distance."""
    dist = np.clip(np.asarray(dist, dtype=np.float64), 0, cfg.d_max)
    i = np.arange(cfg.d // 2)
    arg = dist[..., None] / 10000.0 ** (i / cfg.d)
    out = np.empty(dist.shape + (cfg.d,), dtype=np.float64)
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def embed_direction(direction, w_dir: Tensor) -> Tensor:
    """H×W×4 direction bits times a 4×d embedding → H×W×d (differentiable in ``w_dir``)."""
    w_dir = as_tensor(w_dir)
    bits = np.asarray(direction)
    if bits.shape[-1] != 4 or w_dir.ndim != 2 or w_dir.shape[0] != 4:
        raise DimensionError(f"direction {bits.shape} and embedding {w_dir.shape} do not match (need ...×4 and 4×d)")
    flat = Tensor(bits.reshape(-1, 4).astype(w_dir.dtype))
    return (flat @ w_dir).reshape(bits.shape[:-1] + (w_dir.shape[1],))


@dataclass
class MPEOutput:
    """Encoded distance (constant) and direction (learned) fields, each H×W×d."""

    p_dis: np.ndarray
    p_dir: Tensor

    @property
    def p(self) -> Tensor:
        return self.p_dir + self.p_dis.astype(self.p_dir.dtype)

    @property
    def shape(self) -> tuple:
        return self.p_dis.shape


def compute_mpe(mask, w_dir: Tensor, cfg: MPEConfig = MPEConfig()) -> MPEOutput:
    m = _check_mask(mask)
    if w_dir.shape[1] != cfg.d:
        raise DimensionError(f"embedding width {w_dir.shape[1]} != encoding width {cfg.d}")
    dist = masking_distance(m)
    if m.all():
        dist = np.full(m.shape, cfg.d_max)
    p_dis = sinusoidal_encode(dist, cfg).astype(w_dir.dtype)
    return MPEOutput(p_dis, embed_direction(masking_direction(m), w_dir))


def resize_nearest_hw(x, size: tuple[int, int]):
    """Nearest resampling of the leading two axes of an array or tensor."""
    h, w = x.shape[:2]
    if (h, w) == tuple(size):
        return x
    rows = nearest_index(h, size[0])
    cols = nearest_index(w, size[1])
    return x[rows[:, None], cols[None, :]]


def resize_mpe(p: MPEOutput, h: int, w: int) -> MPEOutput:
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {h}×{w}")
    return MPEOutput(resize_nearest_hw(p.p_dis, (h, w)), resize_nearest_hw(p.p_dir, (h, w)))


def mpe_batch(masks: np.ndarray, w_dir: Tensor, cfg: MPEConfig) -> Tensor:
    """N×1×H×W masks → N×d×H×W positional encoding tensor."""
    outs = [compute_mpe(m[0], w_dir, cfg).p for m in masks]
    return stack(outs, axis=0).transpose(0, 3, 1, 2)
