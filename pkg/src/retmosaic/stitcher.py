"""Incremental mosaic: gain-normalised, distance-weighted accumulation.

The mosaic keeps running sums ``sum(w * c)`` and ``sum(w)`` per pixel,
so the displayed colour is the weighted mean of every contribution
blended so far. A frame pixel's weight is its distance from the nearest
ROI or glare boundary, which favours the centre of each frame and fades
contributions out towards their borders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyOverlap, InvalidConfig
from .imgcore import Frame, chamfer_distance
from .registration import SimilarityTransform
from .vesselness import VesselnessMap

CANVAS_GRANULARITY = 32
GAIN_RANGE = (0.5, 2.0)
WEIGHTING_MODES = ("direct", "inverse")


@dataclass
class MosaicState:
    """Growing mosaic canvas.

    Attributes
    ----------
    rgb_accum : (H, W, 3) float64
        Weighted colour sums.
    weight : (H, W) float64
        Weight sums; a pixel is valid iff its weight is positive.
    vessel_accum : (H, W) float64
        Weighted vesselness sums, fused with the same weights as colour.
    origin_offset : (float, float)
        Canvas position of the start frame's pixel (0, 0). Grows when the
        canvas is extended to the left or top.
    core_accum, core_weight : ndarray
        The same sums restricted to central frame pixels (distance at
        least ``core_fraction`` of the frame's maximum). Used as the
        brightness reference for gain estimation, since the aperture
        darkens frames towards their rims.
    """

    rgb_accum: np.ndarray
    weight: np.ndarray
    vessel_accum: np.ndarray
    origin_offset: tuple = (0.0, 0.0)
    core_accum: np.ndarray | None = None
    core_weight: np.ndarray | None = None
    core_fraction: float = 0.7

    def __post_init__(self):
        if self.core_accum is None:
            self.core_accum = np.zeros_like(self.rgb_accum)
        if self.core_weight is None:
            self.core_weight = np.zeros_like(self.weight)

    @classmethod
    def empty(cls, shape, core_fraction: float = 0.7) -> "MosaicState":
        h, w = shape
        return cls(np.zeros((h, w, 3)), np.zeros((h, w)), np.zeros((h, w)),
                   core_fraction=core_fraction)

    @property
    def shape(self):
        return self.weight.shape

    @property
    def height(self) -> int:
        return self.weight.shape[0]

    @property
    def width(self) -> int:
        return self.weight.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.weight > 0

    def displayed(self) -> np.ndarray:
        """Weighted-mean colour as float64, clamped to [0, 255], zero where invalid."""
        w = self.weight
        out = np.zeros_like(self.rgb_accum)
        m = w > 0
        out[m] = self.rgb_accum[m] / w[m, None]
        return np.clip(out, 0.0, 255.0)

    def core_displayed(self) -> np.ndarray:
        """Weighted mean of central contributions only; zero where there are none."""
        out = np.zeros_like(self.core_accum)
        m = self.core_weight > 0
        out[m] = self.core_accum[m] / self.core_weight[m, None]
        return np.clip(out, 0.0, 255.0)

    def displayed_uint8(self) -> np.ndarray:
        return np.rint(self.displayed()).astype(np.uint8)

    @property
    def vessel_fused(self) -> VesselnessMap:
        m = self.valid
        vals = np.zeros(self.shape)
        vals[m] = self.vessel_accum[m] / self.weight[m]
        return VesselnessMap(vals, m)

    def weight_image16(self) -> np.ndarray:
        """Weight map scaled to the full uint16 range."""
        top = float(self.weight.max())
        if top <= 0:
            return np.zeros(self.shape, dtype=np.uint16)
        return np.rint(self.weight / top * 65535.0).astype(np.uint16)

    def to_start_frame(self, t: SimilarityTransform) -> SimilarityTransform:
        """Re-express a frame-to-canvas transform relative to the start frame."""
        return t.shifted(-self.origin_offset[0], -self.origin_offset[1])

    def from_start_frame(self, t: SimilarityTransform) -> SimilarityTransform:
        return t.shifted(self.origin_offset[0], self.origin_offset[1])


def frame_weights(roi: np.ndarray, glare: np.ndarray) -> np.ndarray:
    """Chamfer distance to the nearest ROI or glare boundary.

    Pixels outside the ROI or inside glare get 0 and take no part in
    blending.
    """
    roi = np.asarray(roi, dtype=bool)
    glare = np.asarray(glare, dtype=bool)
    if roi.shape != glare.shape:
        raise ValueError(f"mask shapes differ: {roi.shape} vs {glare.shape}")
    return chamfer_distance(roi & ~glare)


# --------------------------------------------------------------------------
# warping a frame into the canvas

def _footprint_box(t: SimilarityTransform, frame_shape):
    """Canvas bounding box (x0, y0, x1, y1) of a warped frame, end-exclusive."""
    h, w = frame_shape
    x0 = math.floor(t.tx)
    y0 = math.floor(t.ty)
    x1 = math.ceil(t.tx + t.scale * (w - 1)) + 1
    y1 = math.ceil(t.ty + t.scale * (h - 1)) + 1
    return x0, y0, x1, y1


def _split(p):
    """Integer base, fraction, and whether the next sample is needed."""
    i = np.floor(p)
    f = p - i
    # snap near-integer positions so exact grids need no neighbour
    near = f > 1.0 - 1e-9
    i[near] += 1.0
    f[near] = 0.0
    f[f < 1e-9] = 0.0
    i = i.astype(np.int64)
    return i, f, f > 0


def _sample(frame: Frame, weights, vessel, t: SimilarityTransform, box):
    """Bilinear samples of colour, distance and vesselness over a canvas box.

    A canvas pixel is covered only when every source pixel entering its
    bilinear stencil has positive distance, so glare and the ROI rim
    never leak into the blend.
    """
    x0, y0, x1, y1 = box
    h, w = weights.shape
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    ix, fx, nx = _split((xx - t.tx) / t.scale)
    iy, fy, ny = _split((yy - t.ty) / t.scale)
    inside = (ix >= 0) & (iy >= 0) & (ix + nx <= w - 1) & (iy + ny <= h - 1)

    ix0 = np.clip(ix, 0, w - 1)
    iy0 = np.clip(iy, 0, h - 1)
    ix1 = np.clip(ix + nx, 0, w - 1)
    iy1 = np.clip(iy + ny, 0, h - 1)
    d00, d01 = weights[iy0, ix0], weights[iy0, ix1]
    d10, d11 = weights[iy1, ix0], weights[iy1, ix1]
    covered = inside & (np.minimum(np.minimum(d00, d01), np.minimum(d10, d11)) > 0)

    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    def interp(img):
        return (w00 * img[iy0, ix0] + w01 * img[iy0, ix1]
                + w10 * img[iy1, ix0] + w11 * img[iy1, ix1])

    d = np.where(covered, interp(weights), 0.0)
    colour = None
    if frame is not None:
        rgb = frame.rgb.astype(np.float64)
        colour = np.stack([interp(rgb[..., k]) for k in range(3)], axis=-1)
        colour[~covered] = 0.0
    ves = np.where(covered, interp(vessel), 0.0) if vessel is not None else None
    return colour, d, ves, covered


def warp_frame(frame: Frame | None, weights: np.ndarray, t: SimilarityTransform, shape):
    """Warp a frame into a canvas of ``shape``.

    With ``frame=None`` only the distance and coverage are computed.

    Returns
    -------
    rgb : (H, W, 3) float64
    distance : (H, W) float64
        Interpolated weight-distance, 0 where not covered.
    covered : (H, W) bool
    """
    h, w = shape
    fx0, fy0, fx1, fy1 = _footprint_box(t, weights.shape)
    box = (max(fx0, 0), max(fy0, 0), min(fx1, w), min(fy1, h))
    rgb = np.zeros((h, w, 3))
    dist = np.zeros((h, w))
    covered = np.zeros((h, w), dtype=bool)
    if box[2] <= box[0] or box[3] <= box[1]:
        return rgb, dist, covered
    c, d, _, cov = _sample(frame, weights, None, t, box)
    sl = np.s_[box[1]:box[3], box[0]:box[2]]
    dist[sl], covered[sl] = d, cov
    if c is not None:
        rgb[sl] = c
    return rgb, dist, covered


def gain_overlap(mosaic: MosaicState, weights: np.ndarray, t: SimilarityTransform,
                 core_fraction: float | None = None) -> np.ndarray:
    """Canvas pixels central both in the frame and in the mosaic.

    Frame pixels count as central when their distance is at least
    ``core_fraction`` (default: the mosaic's) of the frame's maximum;
    mosaic pixels when they have received central contributions.
    """
    if core_fraction is None:
        core_fraction = mosaic.core_fraction
    _, dist, covered = warp_frame(None, weights, t, mosaic.shape)
    top = float(weights.max()) if weights.size else 0.0
    return covered & (mosaic.core_weight > 0) & (dist >= core_fraction * top)


def illumination_gain(frame: Frame, mosaic: MosaicState, t: SimilarityTransform,
                      overlap: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Per-channel gain matching the warped frame's mean colour to the mosaic's.

    The ratio of means over ``overlap`` is clamped to [0.5, 2]; a channel
    whose frame mean is zero gets gain 1. ``reference`` replaces the
    displayed mosaic as the target colour (e.g. ``mosaic.core_displayed()``).

    Raises
    ------
    EmptyOverlap
        If ``overlap`` selects no pixel that the frame actually covers.
    """
    overlap = np.asarray(overlap, dtype=bool)
    if overlap.shape != mosaic.shape:
        raise ValueError("overlap mask must match the mosaic canvas")
    if not overlap.any():
        raise EmptyOverlap("no overlap between frame and mosaic")
    weights = np.ones(frame.shape)
    rgb, _, covered = warp_frame(frame, weights, t, mosaic.shape)
    m = overlap & covered
    if not m.any():
        raise EmptyOverlap("overlap not covered by the warped frame")
    f_mean = rgb[m].mean(axis=0)
    if reference is None:
        reference = mosaic.displayed()
    m_mean = reference[m].mean(axis=0)
    gain = np.ones(3)
    nz = f_mean > 0
    gain[nz] = m_mean[nz] / f_mean[nz]
    return np.clip(gain, *GAIN_RANGE)


# --------------------------------------------------------------------------
# blending

def _pad_amount(need: int) -> int:
    return 0 if need <= 0 else CANVAS_GRANULARITY * math.ceil(need / CANVAS_GRANULARITY)


def expand(mosaic: MosaicState, box) -> tuple:
    """Grow the canvas so that ``box`` fits; returns the (dx, dy) shift applied."""
    x0, y0, x1, y1 = box
    h, w = mosaic.shape
    left, top = _pad_amount(-x0), _pad_amount(-y0)
    right, bottom = _pad_amount(x1 - w), _pad_amount(y1 - h)
    if not (left or top or right or bottom):
        return 0, 0
    pads = ((top, bottom), (left, right))
    mosaic.rgb_accum = np.pad(mosaic.rgb_accum, pads + ((0, 0),))
    mosaic.weight = np.pad(mosaic.weight, pads)
    mosaic.vessel_accum = np.pad(mosaic.vessel_accum, pads)
    mosaic.core_accum = np.pad(mosaic.core_accum, pads + ((0, 0),))
    mosaic.core_weight = np.pad(mosaic.core_weight, pads)
    ox, oy = mosaic.origin_offset
    mosaic.origin_offset = (ox + left, oy + top)
    return left, top


def blend(mosaic: MosaicState, frame: Frame, frame_v: VesselnessMap, weights: np.ndarray,
          t: SimilarityTransform, gain=(1.0, 1.0, 1.0), weighting: str = "direct"):
    """Accumulate a registered frame into the mosaic (in place).

    ``t`` maps frame pixels to the canvas as it is *before* the call; if
    the canvas has to grow to the left or top the transform is shifted
    along with it. Each covered canvas pixel receives weight ``w = d``
    (``weighting="direct"``) or ``w = 1/d`` (``"inverse"``), where ``d``
    is the bilinearly sampled weight-distance.

    Returns
    -------
    MosaicState
        The same object, for chaining.
    """
    if weighting not in WEIGHTING_MODES:
        raise InvalidConfig(f"unknown weighting {weighting!r}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != frame.shape:
        raise ValueError("weights must match the frame dimensions")
    if not (weights > 0).any():
        return mosaic

    box = _footprint_box(t, frame.shape)
    dx, dy = expand(mosaic, box)
    t = t.shifted(dx, dy)
    x0, y0, x1, y1 = box[0] + dx, box[1] + dy, box[2] + dx, box[3] + dy

    colour, d, ves, covered = _sample(frame, weights, frame_v.values, t, (x0, y0, x1, y1))
    if not covered.any():
        return mosaic
    w = np.zeros_like(d)
    w[covered] = d[covered] if weighting == "direct" else 1.0 / d[covered]
    gain = np.asarray(gain, dtype=np.float64).reshape(1, 1, 3)

    sl = np.s_[y0:y1, x0:x1]
    contrib = w[..., None] * gain * colour
    mosaic.rgb_accum[sl] += contrib
    mosaic.weight[sl] += w
    mosaic.vessel_accum[sl] += w * ves
    central = d >= mosaic.core_fraction * float(weights.max())
    mosaic.core_accum[sl] += np.where(central[..., None], contrib, 0.0)
    mosaic.core_weight[sl] += np.where(central, w, 0.0)
    return mosaic
