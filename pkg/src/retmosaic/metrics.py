"""Ground-truth scores for mosaics built from phantom sequences.

All comparisons happen on the phantom's retina grid. A mosaic pixel
``q`` sits at start-frame coordinates ``q - origin_offset``; the start
frame's true transform carries those to the retina.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imgcore import LUMA_WEIGHTS
from .registration import SimilarityTransform
from .stitcher import MosaicState

_EIGHT = np.ones((3, 3), dtype=bool)


def _retina_grid(n):
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    return xx, yy


def footprint_union(truth) -> np.ndarray:
    """Retina pixels seen inside the true ROI of at least one frame."""
    n = truth.retina.shape[0]
    xx, yy = _retina_grid(n)
    union = np.zeros((n, n), dtype=bool)
    for i, t in enumerate(truth.transforms):
        fx, fy = t.inverse().apply(xx, yy)
        e = truth.rois[i]
        c, s = np.cos(e.theta), np.sin(e.theta)
        u = ((fx - e.x0) * c + (fy - e.y0) * s) / e.a
        v = (-(fx - e.x0) * s + (fy - e.y0) * c) / e.b
        union |= u * u + v * v < 1.0
    return union


def mosaic_to_retina(mosaic: MosaicState, start_truth: SimilarityTransform):
    """Transform from mosaic canvas pixels to retina pixels."""
    ox, oy = mosaic.origin_offset
    return start_truth.compose(SimilarityTransform(1.0, -ox, -oy))


def _pull_mosaic(mosaic: MosaicState, start_truth: SimilarityTransform, n: int):
    """Mosaic validity and displayed colour resampled onto the retina grid."""
    to_canvas = mosaic_to_retina(mosaic, start_truth).inverse()
    xx, yy = _retina_grid(n)
    cx, cy = to_canvas.apply(xx, yy)
    xi, yi = np.rint(cx).astype(np.int64), np.rint(cy).astype(np.int64)
    h, w = mosaic.shape
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    valid = np.zeros((n, n), dtype=bool)
    valid[inside] = mosaic.valid[yi[inside], xi[inside]]
    return valid, cx, cy


def coverage(mosaic: MosaicState, truth, start_index: int) -> float:
    """Fraction of the union of true ROI footprints covered by the mosaic."""
    union = footprint_union(truth)
    valid, _, _ = _pull_mosaic(mosaic, truth.transforms[start_index], union.shape[0])
    return float(np.count_nonzero(union & valid) / np.count_nonzero(union))


def colour_mae(mosaic: MosaicState, truth, start_index: int) -> float:
    """Mean absolute error (grey levels, all channels) over covered mosaic pixels.

    Each covered canvas pixel is compared with the ground-truth retina
    sampled bilinearly at its true position; pixels that map off the
    retina are skipped.
    """
    h, w = mosaic.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rx, ry = mosaic_to_retina(mosaic, truth.transforms[start_index]).apply(xx, yy)
    n = truth.retina.shape[0]
    m = mosaic.valid & (rx >= 0) & (rx <= n - 1) & (ry >= 0) & (ry <= n - 1)
    ref = truth.retina.rgb.astype(np.float64)
    got = mosaic.displayed_uint8().astype(np.float64)
    errs = [np.abs(ndimage.map_coordinates(ref[..., k], [ry[m], rx[m]], order=1)
                   - got[..., k][m]) for k in range(3)]
    return float(np.mean(errs))


@dataclass
class SeamScore:
    boundary_median: float
    interior_median: float

    @property
    def ratio(self) -> float:
        if self.interior_median == 0:
            return np.inf if self.boundary_median > 0 else 1.0
        return self.boundary_median / self.interior_median


def seam_score(mosaic: MosaicState, footprints, border: int = 6) -> SeamScore:
    """Gradient magnitude on stitch boundaries against the mosaic interior.

    Parameters
    ----------
    mosaic : MosaicState
    footprints : iterable of (H, W) bool arrays
        Canvas coverage of each blended frame. The outline of each
        footprint is a place where a frame starts or stops contributing.
    border : int
        Pixels this close to the edge of the mosaic are ignored on both
        sides of the comparison.
    """
    luma = mosaic.displayed() @ LUMA_WEIGHTS
    gy, gx = np.gradient(luma)
    grad = np.hypot(gx, gy)
    core = ndimage.binary_erosion(mosaic.valid, _EIGHT, iterations=border)
    seams = np.zeros(mosaic.shape, dtype=bool)
    for fp in footprints:
        seams |= fp & ~ndimage.binary_erosion(fp, _EIGHT)
    seams = ndimage.binary_dilation(seams, _EIGHT) & core
    interior = core & ~seams
    return SeamScore(float(np.median(grad[seams])) if seams.any() else 0.0,
                     float(np.median(grad[interior])) if interior.any() else 0.0)


def frame_footprints(output, analyses) -> list:
    """Canvas coverage of every used frame of a pipeline run."""
    from .stitcher import warp_frame

    mosaic = output.mosaic
    out = []
    for r in output.reports:
        if r.status != "used":
            continue
        t = mosaic.from_start_frame(r.transform)
        _, _, covered = warp_frame(None, analyses[r.index].weights, t, mosaic.shape)
        out.append(covered)
    return out
