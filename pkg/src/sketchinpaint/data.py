"""Free-form mask generation and synthetic structured scenes with exact edge/line ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sketch import LineSegmentSet, canny, default_sigma, rasterize_lines, rgb_to_gray


class GenerationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskGenConfig:
    size: int = 64
    rate: tuple[float, float] = (0.10, 0.50)
    blob_prob: float = 0.20
    blobs: tuple[int, int] = (1, 3)
    vertices: tuple[int, int] = (4, 12)
    brush_width: tuple[float, float] = (0.05, 0.12)  # fraction of the side
    step_length: tuple[float, float] = (0.04, 0.12)  # fraction of the side
    max_attempts: int = 100

    def __post_init__(self):
        lo, hi = self.rate
        if not 0 <= lo <= hi <= 1:
            raise ValueError(f"rate band must satisfy 0 <= lo <= hi <= 1, got {self.rate}")
        if not 0 <= self.blob_prob <= 1:
            raise ValueError("blob_prob must lie in [0, 1]")


@dataclass
class MaskSample:
    mask: np.ndarray  # H×W uint8, 1 = masked
    blob: bool  # whether smooth blobs were mixed in
    attempts: int

    @property
    def rate(self) -> float:
        return float(self.mask.mean())


def smooth_blob(rng: np.random.Generator, size: int, area: float) -> np.ndarray:
    """Star-shaped region with a low-order Fourier radius, scaled to roughly ``area`` of the grid."""
    yy, xx = np.mgrid[:size, :size]
    cy, cx = rng.uniform(0.2, 0.8, 2) * size
    theta = np.arctan2(yy + 0.5 - cy, xx + 0.5 - cx)
    radius = np.hypot(yy + 0.5 - cy, xx + 0.5 - cx)
    shape = np.ones_like(theta)
    for k in range(2, 5):
        shape += rng.uniform(0, 0.25) * np.cos(k * theta + rng.uniform(0, 2 * math.pi))
    r0 = math.sqrt(area * size * size / math.pi)
    return radius <= r0 * shape


def _brush_stroke(rng: np.random.Generator, cfg: MaskGenConfig) -> LineSegmentSet:
    n = int(rng.integers(cfg.vertices[0], cfg.vertices[1] + 1))
    p = rng.uniform(0.1, 0.9, 2)
    angle = rng.uniform(0, 2 * math.pi)
    width = rng.uniform(*cfg.brush_width) * cfg.size
    segs = []
    for _ in range(n):
        angle += rng.normal(0, 0.6)
        q = np.clip(p + rng.uniform(*cfg.step_length) * np.array([math.cos(angle), math.sin(angle)]), 0, 1)
        segs.append([p[0], p[1], q[0], q[1]])
        p = q
    return LineSegmentSet(np.array(segs), width)


def _attempt(rng: np.random.Generator, cfg: MaskGenConfig, blob: bool) -> np.ndarray | None:
    lo, hi = cfg.rate
    s = cfg.size
    m = np.zeros((s, s), dtype=bool)
    if blob:
        k = int(rng.integers(cfg.blobs[0], cfg.blobs[1] + 1))
        for _ in range(k):
            m |= smooth_blob(rng, s, rng.uniform(0.3, 0.8) * max(lo, 0.02) / k)
    # grow brush strokes one segment at a time so the rate creeps into the band
    target = rng.uniform(lo, hi)
    while m.mean() < target:
        stroke = _brush_stroke(rng, cfg)
        for seg in stroke.segments:
            m |= rasterize_lines(LineSegmentSet(seg[None], stroke.widths[:1]), s, s, antialias=False, ref_size=s) > 0
            if m.mean() >= target:
                break
    return m if lo <= m.mean() <= hi else None


def generate_mask_sample(cfg: MaskGenConfig, seed: int) -> MaskSample:
    """Random-walk brush mask, unioned with smooth blobs with probability ``blob_prob``.

    Geometry is resampled until the masked fraction lands inside the band;
    the blob decision is drawn once so the mix frequency stays unbiased.
    """
    if cfg.size < 32:
        raise ValueError(f"mask size must be >= 32, got {cfg.size}")
    rng = np.random.default_rng(seed)
    blob = bool(rng.random() < cfg.blob_prob)
    for attempt in range(1, cfg.max_attempts + 1):
        m = _attempt(rng, cfg, blob)
        if m is not None:
            return MaskSample(m.astype(np.uint8), blob, attempt)
    raise GenerationError(f"no mask in rate band {cfg.rate} after {cfg.max_attempts} attempts")


def generate_mask(cfg: MaskGenConfig, seed: int) -> np.ndarray:
    return generate_mask_sample(cfg, seed).mask


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSceneConfig:
    size: int = 64
    polygons: tuple[int, int] = (1, 3)
    segments: tuple[int, int] = (2, 5)
    line_width: tuple[float, float] = (1.5, 2.5)  # pixels at the scene size
    min_length: float = 0.5
    shade_gap: float = 0.25  # minimum contrast of a painted line against its background

    def __post_init__(self):
        if self.size < 8:
            raise ValueError("scene size must be >= 8")
        if self.segments[0] < 0 or self.segments[0] > self.segments[1]:
            raise ValueError(f"bad segment count range {self.segments}")


@dataclass
class Scene:
    image: np.ndarray  # 3×H×W in [0, 1]
    edge: np.ndarray  # H×W in {0, 1}
    line: np.ndarray  # H×W coverage in [0, 1]
    lines: LineSegmentSet


def _polygon_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Convex polygon from sorted random angles around a random centre."""
    k = int(rng.integers(3, 7))
    c = rng.uniform(0.25, 0.75, 2)
    r = rng.uniform(0.15, 0.35)
    ang = np.sort(rng.uniform(0, 2 * math.pi, k))
    px = c[0] + r * np.cos(ang)
    py = c[1] + r * np.sin(ang)
    yy, xx = (np.mgrid[:size, :size] + 0.5) / size
    inside = np.ones((size, size), dtype=bool)
    for i in range(k):
        x0, y0, x1, y1 = px[i], py[i], px[(i + 1) % k], py[(i + 1) % k]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def _long_segment(rng: np.random.Generator, min_length: float) -> np.ndarray:
    while True:
        s = rng.uniform(0.02, 0.98, 4)
        if math.hypot(s[2] - s[0], s[3] - s[1]) >= min_length:
            return s


def synth_scene(cfg: SyntheticSceneConfig, seed: int) -> Scene:
    """Flat-shaded polygons over a gradient with painted straight lines.

    ``line`` is the antialiased raster of the painted segments and ``edge``
    is Canny on the rendered grayscale image.
    """
    rng = np.random.default_rng(seed)
    s = cfg.size
    yy, xx = (np.mgrid[:s, :s] + 0.5) / s
    base = rng.uniform(0.2, 0.8, 3)
    tilt = rng.uniform(-0.15, 0.15, 2)
    img = np.clip(base[:, None, None] + tilt[0] * (xx - 0.5) + tilt[1] * (yy - 0.5), 0, 1)
    for _ in range(int(rng.integers(cfg.polygons[0], cfg.polygons[1] + 1))):
        region = _polygon_mask(rng, s)
        img[:, region] = rng.uniform(0, 1, 3)[:, None]
    n = int(rng.integers(cfg.segments[0], cfg.segments[1] + 1))
    segs = np.array([_long_segment(rng, cfg.min_length) for _ in range(n)]).reshape(-1, 4)
    # widths are stored in reference pixels so that the raster at ``s`` has the sampled width
    widths = rng.uniform(*cfg.line_width, size=n) * 256 / s
    lines = LineSegmentSet(segs, widths)
    line = rasterize_lines(lines, s, s)
    for k in range(n):
        cover = rasterize_lines(LineSegmentSet(segs[k:k + 1], widths[k:k + 1]), s, s)
        under = (img * cover).sum(axis=(1, 2)) / max(cover.sum(), 1e-12)
        # dark on bright backgrounds, bright on dark ones
        shade = np.where(under.mean() > 0.5, rng.uniform(0, max(under.mean() - cfg.shade_gap, 0)),
                         rng.uniform(min(under.mean() + cfg.shade_gap, 1), 1))
        img = img * (1 - cover) + shade * cover
    edge = canny(rgb_to_gray(img), sigma=default_sigma(s))
    return Scene(img.astype(np.float64), edge.astype(np.float64), line, lines)
