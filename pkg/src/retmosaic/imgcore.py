"""Image containers and primitive raster operations.

Grey images, masks and distance maps are plain numpy arrays indexed
``[row, col]`` (i.e. ``[y, x]``). Only the colour frame gets its own
container because it carries a video index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogram, EmptyMask

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CHAMFER_ORTHO = 3
CHAMFER_DIAG = 4

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class Frame:
    """One RGB video frame.

    Attributes
    ----------
    rgb : (H, W, 3) uint8 ndarray
    index : int
        Ordinal position in the source video.
    """

    rgb: np.ndarray
    index: int = 0

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got {rgb.shape}")
        if rgb.shape[0] < 16 or rgb.shape[1] < 16:
            raise ValueError(f"frame too small: {rgb.shape[1]}x{rgb.shape[0]}")
        if rgb.dtype != np.uint8:
            if np.any((rgb < 0) | (rgb > 255)):
                raise ValueError("channel values must lie in [0, 255]")
            rgb = rgb.astype(np.uint8)
        self.rgb = rgb

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]

    @property
    def green(self) -> np.ndarray:
        return self.rgb[..., 1].astype(np.float64)


def to_grayscale(frame: Frame) -> np.ndarray:
    """Rec. 601 luma of a frame as a float64 image in [0, 255]."""
    return frame.rgb.astype(np.float64) @ LUMA_WEIGHTS


def _histogram_bins(gray: np.ndarray) -> np.ndarray:
    # ceil-binning keeps the histogram split at t identical to ``gray > t``
    return np.clip(np.ceil(gray), 0, 255).astype(np.int64)


def otsu_threshold(gray: np.ndarray) -> int:
    """Otsu's threshold over a 256-bin histogram.

    Returns the smallest level ``t`` maximising the between-class
    variance of the split ``{v <= t}`` / ``{v > t}``.
    The comparison is done in exact integer arithmetic so ties are
    resolved deterministically.
    """
    bins = _histogram_bins(np.asarray(gray, dtype=np.float64))
    hist = np.bincount(bins.ravel(), minlength=256)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("image has a single intensity level")

    counts = [int(c) for c in hist]
    n_total = sum(counts)
    s_total = sum(i * c for i, c in enumerate(counts))

    best_t, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = n_total - n0
        if n0 == 0 or n1 == 0:
            continue
        # sigma_b^2 * N^2 = (N*S0 - N0*S)^2 / (N0*N1)
        num = (n_total * s0 - n0 * s_total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize(gray: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(gray) > threshold


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected component of ``mask``.

    Ties go to the component whose first pixel comes earliest in
    row-major order.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("mask has no set pixels")
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    # ndimage.label numbers components in raster order of first pixel
    return labels == int(np.argmax(sizes))


def contour(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask.

    The image border counts as outside.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("mask has no set pixels")
    p = np.pad(mask, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~interior


def chamfer_distance(mask: np.ndarray) -> np.ndarray:
    """Two-pass 3-4 chamfer distance to the nearest exterior pixel.

    Pixels outside the mask, and the virtual ring beyond the image
    border, are exterior. Returned in pixel units (raw chamfer / 3).

    Each raster pass is vectorised per row: the contribution of the
    previous row is taken first, then the in-row recurrence
    ``d[x] = min(d[x], d[x-1] + 3)`` is solved with a running minimum.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    big = np.iinfo(np.int64).max // 4
    d = np.where(np.pad(mask, 1, constant_values=False), big, 0).astype(np.int64)
    ramp = CHAMFER_ORTHO * np.arange(w + 2, dtype=np.int64)
    a, b = CHAMFER_ORTHO, CHAMFER_DIAG

    for y in range(1, h + 1):
        prev = d[y - 1]
        row = d[y]
        row[1:-1] = np.minimum.reduce(
            [row[1:-1], prev[1:-1] + a, prev[:-2] + b, prev[2:] + b])
        d[y] = np.minimum.accumulate(row - ramp) + ramp
    for y in range(h, 0, -1):
        nxt = d[y + 1]
        row = d[y]
        row[1:-1] = np.minimum.reduce(
            [row[1:-1], nxt[1:-1] + a, nxt[:-2] + b, nxt[2:] + b])
        rev = row[::-1]
        d[y] = (np.minimum.accumulate(rev - ramp) + ramp)[::-1]
    return d[1:-1, 1:-1] / CHAMFER_ORTHO


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def asf(gray: np.ndarray, radii=(1, 2, 3)) -> np.ndarray:
    """Alternating sequential filter: closing then opening per radius."""
    radii = list(radii)
    if any(r < 1 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii must be strictly increasing and >= 1: {radii}")
    out = np.asarray(gray, dtype=np.float64)
    for r in radii:
        fp = disk(r)
        out = ndimage.grey_closing(out, footprint=fp, mode="reflect")
        out = ndimage.grey_opening(out, footprint=fp, mode="reflect")
    return out
