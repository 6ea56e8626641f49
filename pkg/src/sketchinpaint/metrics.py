"""Image quality and structure metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .tensor import DimensionError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K = (0.01, 0.03)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred, gt, data_range: float = 1.0) -> float:
    a, b = _pair(pred, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(data_range ** 2 / mse))


def ssim_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    y = correlate1d(correlate1d(x, k, axis=-1, mode="constant"), k, axis=-2, mode="constant")
    return y[..., r:y.shape[-2] - r, r:y.shape[-1] - r]


def ssim(pred, gt, data_range: float = 1.0) -> float:
    """Mean SSIM over the valid window positions of each channel (H×W, C×H×W or N×C×H×W)."""
    a, b = _pair(pred, gt)
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} images, got {a.shape}")
    k = ssim_window()
    c1, c2 = (SSIM_K[0] * data_range) ** 2, (SSIM_K[1] * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else (1.0 if self.fn == 0 else 0.0)

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else (1.0 if self.fp == 0 else 0.0)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def edge_line_prf(pred, gt, mask=None, threshold: float = 0.5) -> PRF:
    """Counts on binarized maps (pred ≥ threshold, gt ≥ 0.5), optionally restricted to mask = 1.

    An empty prediction against an empty target scores 1.0 everywhere.
    """
    a, b = _pair(pred, gt)
    p, g = a >= threshold, b >= 0.5
    if mask is not None:
        m = np.asarray(mask)
        try:
            region = np.broadcast_to(m.astype(bool), p.shape)
        except ValueError as exc:
            raise DimensionError(f"mask {m.shape} does not broadcast to {p.shape}") from exc
        p, g = p & region, g & region
    return PRF(int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & g)))
