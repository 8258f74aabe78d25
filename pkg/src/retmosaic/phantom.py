"""Synthetic fundus video sequences with full ground truth.

A square "retina" is rendered once (orange-red background, bright optic
disc, dark branching vessel tree). Each frame is a similarity-warped
crop of it, shown through an elliptical aperture that darkens towards
its rim, with optional white glare blobs, sensor noise and defocus blur.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig
from .imgcore import Frame
from .registration import SimilarityTransform
from .roi import CanonicalEllipse, conic_from_canonical

BACKGROUND_RGB = np.array([226.0, 128.0, 70.0])
DISC_RGB = np.array([244.0, 190.0, 136.0])
VESSEL_RGB = np.array([170.0, 74.0, 50.0])
OUTSIDE_RGB = np.array([10.0, 7.0, 6.0])


@dataclass
class PhantomConfig:
    retina_size: int = 640
    vessel_branches: int = 6
    frame_size: int = 224
    roi_radius_range: tuple = (84.0, 100.0)
    frame_count: int = 60
    # list of (cx, cy, zoom) in retina pixels; None -> serpentine pan
    trajectory: list | None = None
    glare_blob_count: int = 1
    glare_radius_range: tuple = (7.0, 13.0)
    blur_frames: list = field(default_factory=list)
    blur_sigma: float = 3.0
    noise_sigma: float = 3.0
    rim_brightness: float = 0.45
    seed: int = 0

    def __post_init__(self):
        if self.frame_size >= self.retina_size:
            raise InvalidConfig("frame_size must be smaller than retina_size")
        if self.frame_size < 16:
            raise InvalidConfig("frame_size must be >= 16")
        counts = (self.vessel_branches, self.frame_count, self.glare_blob_count)
        if min(counts) < 0:
            raise InvalidConfig("counts must be non-negative")
        lo, hi = self.roi_radius_range
        if not 0 < lo <= hi:
            raise InvalidConfig("roi_radius_range must satisfy 0 < lo <= hi")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise InvalidConfig("sigmas must be non-negative")
        if self.trajectory is not None and len(self.trajectory) != self.frame_count:
            raise InvalidConfig("trajectory length must equal frame_count")
        if not 0 < self.rim_brightness <= 1:
            raise InvalidConfig("rim_brightness must lie in (0, 1]")


@dataclass
class GroundTruth:
    retina: Frame
    vessel_mask: np.ndarray
    rois: list
    transforms: list   # frame -> retina
    glare_masks: list

    def roi_mask(self, i: int) -> np.ndarray:
        size = self.glare_masks[i].shape
        yy, xx = np.mgrid[0:size[0], 0:size[1]]
        return conic_from_canonical(self.rois[i]).evaluate(xx, yy) < 0


def serpentine(frame_count: int, retina_size: int, frame_size: int,
               rows: int = 3, zoom_amplitude: float = 0.03):
    """Back-and-forth horizontal pan in ``rows`` passes around the retina centre."""
    if frame_count == 0:
        return []
    c = (retina_size - 1) / 2.0
    half_w = 0.5 * (retina_size - 1.25 * frame_size)
    half_h = min(0.35 * frame_size, half_w)
    row_y = np.linspace(c - half_h, c + half_h, rows) if rows > 1 else np.array([c])
    # parametrise the whole path by arc length so steps are even
    verts = []
    for r, y in enumerate(row_y):
        xs = (c - half_w, c + half_w) if r % 2 == 0 else (c + half_w, c - half_w)
        verts += [(xs[0], y), (xs[1], y)]
    verts = np.array(verts)
    seg = np.linalg.norm(np.diff(verts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, cum[-1], frame_count)
    px = np.interp(s, cum, verts[:, 0])
    py = np.interp(s, cum, verts[:, 1])
    zoom = 1.0 + zoom_amplitude * np.sin(2 * np.pi * s / max(cum[-1], 1.0))
    return [(float(x), float(y), float(z)) for x, y, z in zip(px, py, zoom)]


def _smooth_field(rng, shape, sigma, amplitude):
    f = ndimage.gaussian_filter(rng.normal(size=shape), sigma)
    f /= f.std() + 1e-12
    return amplitude * f


def _vessel_tree(rng, size, root, n_branches):
    """Centreline pixels and widths of a random branching walk."""
    pts, widths = [], []
    stack = []
    for k in range(n_branches):
        heading = 2 * np.pi * (k + rng.uniform(0.2, 0.8)) / max(n_branches, 1)
        stack.append((np.array(root, dtype=float), heading, 6.0, 0))
    step = 1.0
    while stack:
        pos, heading, width, depth = stack.pop()
        n_steps = int(rng.integers(260, 400)) if depth == 0 else int(rng.integers(80, 180))
        for i in range(n_steps):
            heading += rng.normal(0.0, 0.07)
            pos = pos + step * np.array([math.cos(heading), math.sin(heading)])
            if not (0 <= pos[0] < size and 0 <= pos[1] < size):
                break
            pts.append(pos.copy())
            widths.append(width)
            width = max(2.0, width - 0.003 * step)
            if depth < 4 and width > 2.2 and rng.random() < 0.014:
                turn = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 0.9)
                stack.append((pos.copy(), heading + turn, max(2.0, 0.7 * width), depth + 1))
    return np.array(pts).reshape(-1, 2), np.array(widths)


def _render_vessels(pts, widths, size):
    """Anti-aliased vessel opacity in [0, 1]."""
    opacity = np.zeros((size, size))
    if len(pts) == 0:
        return opacity
    xi = np.clip(np.rint(pts[:, 0]).astype(int), 0, size - 1)
    yi = np.clip(np.rint(pts[:, 1]).astype(int), 0, size - 1)
    w_int = np.clip(np.rint(widths).astype(int), 2, 6)
    for w in np.unique(w_int):
        centre = np.ones((size, size), dtype=bool)
        sel = w_int == w
        centre[yi[sel], xi[sel]] = False
        d = ndimage.distance_transform_edt(centre)
        np.maximum(opacity, np.clip(w / 2.0 - d + 0.5, 0.0, 1.0), out=opacity)
    return ndimage.gaussian_filter(opacity, 0.6)


def render_retina(config: PhantomConfig, rng):
    n = config.retina_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    shade = 1.0 + _smooth_field(rng, (n, n), 30.0, 0.06)
    img = BACKGROUND_RGB[None, None, :] * shade[..., None]

    # optic disc off to one side of the centre
    dc = np.array([n * rng.uniform(0.38, 0.46), n * rng.uniform(0.45, 0.55)])
    dr = n * 0.055
    rho = np.hypot((xx - dc[0]) / dr, (yy - dc[1]) / (1.1 * dr))
    disc = 1.0 / (1.0 + np.exp((rho - 1.0) * 8.0))
    img = img * (1 - disc[..., None]) + DISC_RGB[None, None, :] * disc[..., None]

    pts, widths = _vessel_tree(rng, n, dc, config.vessel_branches)
    opacity = _render_vessels(pts, widths, n)
    img = img * (1 - opacity[..., None]) + VESSEL_RGB[None, None, :] * opacity[..., None]
    return np.clip(img, 0, 255), opacity >= 0.5


def rim_profile(rho, rim_brightness: float = 0.45):
    """Aperture brightness: 1 at the centre falling to ``rim_brightness`` at rho=1.

    A cosine of rho^2 keeps the centre flat and concentrates the
    darkening near the rim.
    """
    rho = np.clip(rho, 0.0, 1.0)
    return rim_brightness + (1.0 - rim_brightness) * np.cos(0.5 * np.pi * rho * rho)


def _elliptic_radius(e: CanonicalEllipse, xx, yy):
    c, s = math.cos(e.theta), math.sin(e.theta)
    dx, dy = xx - e.x0, yy - e.y0
    u = (dx * c + dy * s) / e.a
    v = (-dx * s + dy * c) / e.b
    return np.sqrt(u * u + v * v)


def render_frame(retina_rgb, transform: SimilarityTransform, roi: CanonicalEllipse,
                 glare_blobs, size: int, rng, config: PhantomConfig, blur: float = 0.0):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rx, ry = transform.apply(xx, yy)
    crop = np.stack([ndimage.map_coordinates(retina_rgb[..., k], [ry, rx],
                                             order=1, mode="nearest")
                     for k in range(3)], axis=-1)
    rho = _elliptic_radius(roi, xx, yy)
    inside = rho < 1.0
    # soft aperture edge, about one pixel wide
    edge = np.clip((1.0 - rho) * min(roi.a, roi.b) + 0.5, 0.0, 1.0)
    shaded = crop * rim_profile(rho, config.rim_brightness)[..., None]
    img = shaded * edge[..., None] + OUTSIDE_RGB[None, None, :] * (1 - edge[..., None])
    if blur > 0:
        img = ndimage.gaussian_filter(img, (blur, blur, 0))

    glare = np.zeros((size, size), dtype=bool)
    for blob in glare_blobs:
        glare |= _elliptic_radius(blob, xx, yy) < 1.0
    glare &= inside
    img[glare] = 255.0

    if config.noise_sigma > 0:
        img = img + rng.normal(0.0, config.noise_sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), glare


def generate(config: PhantomConfig | None = None):
    """Render a frame sequence and its ground truth.

    Returns
    -------
    frames : list of Frame
    truth : GroundTruth
    """
    config = config or PhantomConfig()
    rng = np.random.default_rng(config.seed)
    retina_rgb, vessel_mask = render_retina(config, rng)
    traj = config.trajectory or serpentine(config.frame_count, config.retina_size,
                                           config.frame_size)
    f = config.frame_size
    mid = (f - 1) / 2.0
    lo, hi = config.roi_radius_range
    blur = set(config.blur_frames)

    frames, rois, transforms, glares = [], [], [], []
    for i, (cx, cy, zoom) in enumerate(traj):
        scale = 1.0 / zoom
        t = SimilarityTransform(scale, cx - scale * mid, cy - scale * mid)
        a = rng.uniform(lo, hi)
        b = a * rng.uniform(0.88, 1.0)
        a = min(a, mid - 4.0)
        b = min(b, a)
        roi = CanonicalEllipse(a, b, mid + rng.normal(0, 3.0), mid + rng.normal(0, 3.0),
                               rng.uniform(0, np.pi))
        blobs = []
        for _ in range(config.glare_blob_count):
            r = rng.uniform(*config.glare_radius_range)
            ang = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(0.0, 0.6)
            blobs.append(CanonicalEllipse(
                r, r * rng.uniform(0.7, 1.0),
                roi.x0 + dist * roi.a * math.cos(ang),
                roi.y0 + dist * roi.b * math.sin(ang), rng.uniform(0, np.pi)))
        rgb, glare = render_frame(retina_rgb, t, roi, blobs, f, rng, config,
                                  blur=config.blur_sigma if i in blur else 0.0)
        frames.append(Frame(rgb, i))
        rois.append(roi)
        transforms.append(t)
        glares.append(glare)

    retina = Frame(np.clip(np.rint(retina_rgb), 0, 255).astype(np.uint8), -1)
    return frames, GroundTruth(retina, vessel_mask, rois, transforms, glares)
