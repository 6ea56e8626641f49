"""8-bit PNG reading and writing with a fixed float mapping."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import DimensionError


def to_uint8(x) -> np.ndarray:
    """[0, 1] floats → uint8 by round(clip(x, 0, 1)·255), half away from zero."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0, 1) * 255 + 0.5).astype(np.uint8)


def read_gray(path) -> np.ndarray:
    """H×W float64 in [0, 1]; colour images are converted with Pillow's 'L' mode."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255


def read_rgb(path) -> np.ndarray:
    """3×H×W float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.moveaxis(np.asarray(im.convert("RGB"), dtype=np.float64) / 255, -1, 0)


def read_mask(path) -> np.ndarray:
    """Binary H×W uint8; gray levels ≥ 128 are masked (1)."""
    return (read_gray(path) >= 128 / 255).astype(np.uint8)


def write_png(path, x) -> None:
    """Write H×W (grayscale) or 3×H×W (RGB) floats in [0, 1]."""
    a = np.asarray(x)
    if a.ndim == 3 and a.shape[0] == 3:
        img = Image.fromarray(np.ascontiguousarray(np.moveaxis(to_uint8(a), 0, -1)), mode="RGB")
    elif a.ndim == 2:
        img = Image.fromarray(to_uint8(a), mode="L")
    else:
        raise DimensionError(f"write_png expects H×W or 3×H×W, got {a.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
