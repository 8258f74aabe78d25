"""Specular glare detection.

Glare shows up as near-white, saturated blobs. The per-pixel measure
``g = min(R,G,B) - min/max`` is high only when every channel is bright;
it is smoothed with an alternating sequential filter and thresholded
inside the region of interest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import imgcore
from .errors import InvalidConfig


@dataclass
class GlareConfig:
    threshold: float = 200.0
    asf_radii: list = field(default_factory=lambda: [1, 2, 3])
    min_blob_area: int = 9

    def __post_init__(self):
        if self.threshold <= 0:
            raise InvalidConfig("glare threshold must be positive")
        if self.min_blob_area < 0:
            raise InvalidConfig("min_blob_area must be >= 0")


def glare_measure(frame: imgcore.Frame) -> np.ndarray:
    """Whiteness measure ``min - min/max``; 0 where the pixel is black."""
    rgb = frame.rgb.astype(np.float64)
    lo = rgb.min(axis=-1)
    hi = rgb.max(axis=-1)
    ratio = np.divide(lo, hi, out=np.zeros_like(lo), where=hi > 0)
    return np.where(hi > 0, lo - ratio, 0.0)


def remove_small_blobs(mask: np.ndarray, min_area: int) -> np.ndarray:
    if min_area <= 1 or not mask.any():
        return mask
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def detect_glare(frame: imgcore.Frame, roi: np.ndarray,
                 config: GlareConfig | None = None) -> np.ndarray:
    config = config or GlareConfig()
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != frame.shape:
        raise ValueError(f"roi shape {roi.shape} != frame shape {frame.shape}")
    smooth = imgcore.asf(glare_measure(frame), config.asf_radii)
    mask = (smooth > config.threshold) & roi
    return remove_small_blobs(mask, config.min_blob_area)
