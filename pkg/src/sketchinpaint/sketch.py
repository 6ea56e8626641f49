"""Sketch-space tools: Canny edges, antialiased line drawing, and the structure upsampler."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tensor import ContractError, DimensionError, Tensor, no_grad
from .tensor import functional as F
from .tensor.nn import Conv2d, ConvTranspose2d, Module

REF_SIZE = 256  # line widths are given in pixels at this resolution


# ---------------------------------------------------------------------------
# Canny
# ---------------------------------------------------------------------------

def default_sigma(size: int) -> float:
    """2.0 at 256 px, 2.5 at 512 px, log-linear in between and beyond (floored at 0.5)."""
    return max(0.5, 2.0 * (1 + 0.25 * math.log2(size / 256)))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(4 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _correlate_rows(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    p = np.pad(img, ((0, 0), (r, r)), mode="symmetric")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * p[:, i:i + img.shape[1]]
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    return _correlate_rows(_correlate_rows(img, k).T, k).T


def sobel(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(img, 1, mode="symmetric")
    h, w = img.shape

    def at(dy, dx):
        return p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    gx = (at(-1, 1) + 2 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2 * at(0, -1) + at(1, -1))
    gy = (at(1, -1) + 2 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1))
    return gx, gy


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are maximal along the quantized gradient direction.

    Ties are resolved toward the negative side (``>=`` behind, ``>`` ahead), so
    a plateau two pixels wide keeps exactly one.
    """
    h, w = mag.shape
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int64)  # 0: horizontal gradient
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    p = np.pad(mag, 1)
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dy, dx) in offsets.items():
        ahead = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        behind = p[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (sector == s) & (mag >= behind) & (mag > ahead)
    return np.where(keep & (mag > 0), mag, 0.0)


def hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = nms >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(nms.shape, dtype=bool)
    strong_labels = np.unique(labels[(nms >= high) & weak])
    return np.isin(labels, strong_labels[strong_labels > 0])


def canny(image, sigma: float | None = None, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Binary edge map (uint8 0/1). Thresholds are fractions of the peak gradient magnitude."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"canny expects a grayscale H×W image, got {img.shape}")
    sigma = default_sigma(max(img.shape)) if sigma is None else sigma
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    gx, gy = sobel(gaussian_blur(img, sigma))
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12 * max(1.0, np.abs(img).max()):
        return np.zeros(img.shape, dtype=np.uint8)
    nms = non_max_suppression(mag, gx, gy)
    return hysteresis(nms, low * peak, high * peak).astype(np.uint8)


def rgb_to_gray(img: np.ndarray) -> np.ndarray:
    """3×H×W or H×W×3 → H×W with ITU-R 601 weights."""
    a = np.asarray(img, dtype=np.float64)
    if a.shape[0] == 3 and a.ndim == 3:
        a = np.moveaxis(a, 0, -1)
    return a @ np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------------------
# line segments
# ---------------------------------------------------------------------------

@dataclass
class LineSegmentSet:
    """Segments as K×4 (x0, y0, x1, y1) in [0, 1]², with per-segment width in reference pixels."""

    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        self.widths = np.broadcast_to(np.asarray(self.widths, dtype=np.float64), (len(self.segments),)).copy()
        if np.any(self.segments < 0) or np.any(self.segments > 1):
            raise ContractError("segment coordinates must lie in [0, 1]")
        if np.any(self.widths <= 0):
            raise ContractError("segment widths must be positive")

    def __len__(self) -> int:
        return len(self.segments)

    def to_text(self) -> str:
        rows = ["# x0 y0 x1 y1 width"]
        rows += [" ".join(repr(float(v)) for v in (*s, w)) for s, w in zip(self.segments, self.widths)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LineSegmentSet":
        segs, widths = [], []
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"line {no}: expected 'x0 y0 x1 y1 width', got {raw!r}")
            vals = [float(p) for p in parts]
            segs.append(vals[:4])
            widths.append(vals[4])
        return cls(np.array(segs).reshape(-1, 4), np.array(widths))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "LineSegmentSet":
        return cls.from_text(Path(path).read_text())


def _capsule_distance(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    den = dx * dx + dy * dy
    t = np.zeros_like(px) if den == 0 else np.clip(((px - x0) * dx + (py - y0) * dy) / den, 0, 1)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def rasterize_lines(lines: LineSegmentSet, h: int, w: int, antialias: bool = True,
                    supersample: int = 4, ref_size: int = REF_SIZE) -> np.ndarray:
    """Draw segments as capsules; values are pixel coverage in [0, 1], overlaps combine by max.

    Pixel (i, j) has its centre at ((j + 0.5)/w, (i + 0.5)/h) in normalized
    coordinates. Widths scale with ``h / ref_size``.
    """
    if h < 1 or w < 1:
        raise ContractError(f"raster size must be positive, got {h}×{w}")
    out = np.zeros((h, w), dtype=np.float64)
    scale = h / ref_size
    ss = supersample if antialias else 1
    sub = (np.arange(ss) + 0.5) / ss - 0.5  # sub-sample offsets inside a pixel
    for (x0, y0, x1, y1), width in zip(lines.segments, lines.widths):
        half = 0.5 * width * scale
        # endpoints in pixel units where pixel centres sit on integers
        X0, Y0, X1, Y1 = x0 * w - 0.5, y0 * h - 0.5, x1 * w - 0.5, y1 * h - 0.5
        r0 = max(int(math.floor(min(Y0, Y1) - half - 1)), 0)
        r1 = min(int(math.ceil(max(Y0, Y1) + half + 1)), h - 1)
        c0 = max(int(math.floor(min(X0, X1) - half - 1)), 0)
        c1 = min(int(math.ceil(max(X0, X1) + half + 1)), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        rows = np.arange(r0, r1 + 1, dtype=np.float64)
        cols = np.arange(c0, c1 + 1, dtype=np.float64)
        py = rows[:, None, None, None] + sub[None, None, :, None]
        px = cols[None, :, None, None] + sub[None, None, None, :]
        inside = _capsule_distance(px, py, X0, Y0, X1, Y1) <= half
        cover = inside.mean(axis=(2, 3))
        np.maximum(out[r0:r1 + 1, c0:c1 + 1], cover, out=out[r0:r1 + 1, c0:c1 + 1])
    return out


def random_segments(rng: np.random.Generator, n: int, width: tuple[float, float] = (1.0, 2.0),
                    min_length: float = 0.1) -> LineSegmentSet:
    segs = []
    while len(segs) < n:
        s = rng.uniform(0.05, 0.95, 4)
        if math.hypot(s[2] - s[0], s[3] - s[1]) >= min_length:
            segs.append(s)
    return LineSegmentSet(np.array(segs).reshape(-1, 4), rng.uniform(*width, size=n))


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape
    return img[: h // factor * factor, : w // factor * factor].reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# structure upsampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SSUConfig:
    gamma: float = 2.0
    beta: float = 2.0
    train_range: tuple[float, float] = (1.5, 3.0)
    channels: int = 64

    def __post_init__(self):
        if self.gamma <= 0 or self.beta <= 0:
            raise ValueError("gamma and beta must be positive")

    @classmethod
    def tiny(cls, **kw) -> "SSUConfig":
        return cls(**{"channels": 32, **kw})


class SSU(Module):
    """conv3×3 → conv3×3 → stride-2 transposed conv → conv3×3; one channel in, doubled logits out."""

    def __init__(self, cfg: SSUConfig, rng: np.random.Generator):
        c = cfg.channels
        self.cfg = cfg
        self.conv1 = Conv2d(1, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)
        self.up = ConvTranspose2d(c, c, rng)
        self.conv3 = Conv2d(c, 1, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise DimensionError(f"SSU expects N×1×H×W maps, got {x.shape}")
        h = F.relu(self.conv1(x))
        h = F.relu(self.conv2(h))
        h = F.relu(self.up(h))
        return self.conv3(h)


def ssu_forward(x, model: SSU) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=model.conv1.weight.dtype))
    return model(t)


PROB_FLOOR = 1e-12  # keeps saturated outputs strictly inside (0, 1) in float64


def shifted_sigmoid(logits: np.ndarray, gamma: float, beta: float) -> np.ndarray:
    z = gamma * (np.asarray(logits, dtype=np.float64) + beta)
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
    return np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR)


def resize_bilinear(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize of the last two axes (edge clamped)."""
    sh, sw = x.shape[-2:]
    if (sh, sw) == (h, w):
        return x

    def axis(src, dst):
        c = np.clip((np.arange(dst) + 0.5) * src / dst - 0.5, 0, src - 1)
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, c - lo

    y0, y1, fy = axis(sh, h)
    x0, x1, fx = axis(sw, w)
    top = x[..., y0, :] * (1 - fy)[:, None] + x[..., y1, :] * fy[:, None]
    return top[..., x0] * (1 - fx) + top[..., x1] * fx


def doublings_needed(src: tuple[int, int], dst: tuple[int, int]) -> int:
    ratio = max(dst[0] / src[0], dst[1] / src[1])
    return max(0, math.ceil(math.log2(ratio) - 1e-12))


def upsample_iterative(x: np.ndarray, model: SSU, h: int, w: int, cfg: SSUConfig | None = None) -> np.ndarray:
    """Double with the SSU ``q`` times (shifted sigmoid after each pass), then bilinear to h×w.

    ``x`` is N×1×H×W (or H×W) with values in [0, 1].
    """
    cfg = model.cfg if cfg is None else cfg
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None, None]
    sh, sw = a.shape[-2:]
    if h < sh or w < sw:
        raise ContractError(f"target {h}×{w} is smaller than source {sh}×{sw}")
    dtype = model.conv1.weight.dtype
    with no_grad():
        for _ in range(doublings_needed((sh, sw), (h, w))):
            logits = model(Tensor(a.astype(dtype))).data
            a = shifted_sigmoid(logits, cfg.gamma, cfg.beta)
    out = resize_bilinear(a, h, w)
    return out[0, 0] if squeeze else out
