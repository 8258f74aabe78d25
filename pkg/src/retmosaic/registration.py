"""Scale + translation registration of vesselness maps.

The frame's vesselness map is matched against the mosaic's by masked,
zero-mean normalised cross-correlation. The whole translation range is
scanned at the coarsest pyramid level (via FFT, one pass per candidate
scale) and the winner is refined locally on the finer levels. A match is
only trusted when it beats the best competing peak by a clear margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft, ndimage

from .errors import (InsufficientOverlap, InvalidConfig, NoValidHypothesis,
                     ZeroVariance)
from .vesselness import VesselnessMap

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class SimilarityTransform:
    """Maps frame coordinates ``p`` to mosaic coordinates ``scale * p + (tx, ty)``."""

    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, 0.0)

    def apply(self, x, y):
        return self.scale * np.asarray(x) + self.tx, self.scale * np.asarray(y) + self.ty

    def inverse(self) -> "SimilarityTransform":
        s = 1.0 / self.scale
        return SimilarityTransform(s, -self.tx * s, -self.ty * s)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self`` after ``other``."""
        return SimilarityTransform(self.scale * other.scale,
                                   self.scale * other.tx + self.tx,
                                   self.scale * other.ty + self.ty)

    def shifted(self, dx: float, dy: float) -> "SimilarityTransform":
        return SimilarityTransform(self.scale, self.tx + dx, self.ty + dy)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "tx": self.tx, "ty": self.ty}


@dataclass
class SearchConfig:
    pyramid_levels: int = 3
    scale_min: float = 0.85
    scale_max: float = 1.15
    scale_step_coarse: float = 0.05
    refine_radius: int = 2
    min_overlap_fraction: float = 0.3
    ambiguity_factor: float = 1.5
    nms_radius: float = 5.0

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise InvalidConfig("pyramid_levels must be >= 1")
        if self.scale_min > self.scale_max or self.scale_min <= 0:
            raise InvalidConfig("need 0 < scale_min <= scale_max")
        if self.scale_step_coarse <= 0:
            raise InvalidConfig("scale_step_coarse must be positive")
        if self.ambiguity_factor <= 1:
            raise InvalidConfig("ambiguity_factor must exceed 1")
        if not 0 < self.min_overlap_fraction <= 1:
            raise InvalidConfig("min_overlap_fraction must lie in (0, 1]")

    def scales(self) -> np.ndarray:
        n = int(math.floor((self.scale_max - self.scale_min) / self.scale_step_coarse + 1e-9))
        return self.scale_min + self.scale_step_coarse * np.arange(n + 1)


@dataclass
class RegistrationResult:
    transform: SimilarityTransform
    score: float
    second_score: float
    accepted: bool
    overlap: int = 0
    coarse_score: float = float("nan")

    def to_dict(self) -> dict:
        return {**self.transform.to_dict(), "score": self.score,
                "second_score": self.second_score, "accepted": self.accepted}


# --------------------------------------------------------------------------
# warping and direct NCC

def _axis_stencil(coord, n):
    """Bilinear taps along one axis, as indices into the axis padded by one zero."""
    i0 = np.floor(coord)
    frac = coord - i0
    i0 = i0.astype(np.int64) + 1
    return np.clip(i0, 0, n + 1), np.clip(i0 + 1, 0, n + 1), frac


def _resample(vmap: VesselnessMap, inv_scale, off_x, off_y, shape):
    """Sample ``vmap`` at ``p = (q + off) * inv_scale`` for grid points ``q``.

    Values are bilinear with zeros outside the map. A sample is valid only
    if every source pixel with non-zero bilinear weight is valid, so no
    value mixes in the zeros that lie outside the map or its mask. Without
    rotation the stencil is separable: rows and columns are gathered once.
    """
    h, w = shape
    vh, vw = vmap.shape
    y0, y1, fy = _axis_stencil((np.arange(h) + off_y) * inv_scale, vh)
    x0, x1, fx = _axis_stencil((np.arange(w) + off_x) * inv_scale, vw)
    fy = fy[:, None]

    def sample(img):
        pad = np.pad(img, 1)
        top = pad[y0][:, x0] * (1 - fx) + pad[y0][:, x1] * fx
        bottom = pad[y1][:, x0] * (1 - fx) + pad[y1][:, x1] * fx
        return top * (1 - fy) + bottom * fy

    vals = sample(vmap.values)
    cover = sample(vmap.valid.astype(np.float64))
    return vals, cover >= 1.0 - 1e-9


def warp_to(a: VesselnessMap, transform: SimilarityTransform, shape):
    """Warp ``a`` into a grid of ``shape`` under ``transform``."""
    s = transform.scale
    return _resample(a, 1.0 / s, -transform.tx, -transform.ty, shape)


def _ncc_from(fv, gv):
    n = fv.size
    if n < 2:
        raise ZeroVariance("fewer than two overlapping samples")
    fc = fv - fv.mean()
    gc = gv - gv.mean()
    vf = float(fc @ fc)
    vg = float(gc @ gc)
    if vf <= _VAR_EPS * max(1.0, float(fv @ fv)) or vg <= _VAR_EPS * max(1.0, float(gv @ gv)):
        raise ZeroVariance("signal constant over the overlap")
    return float(np.clip((fc @ gc) / math.sqrt(vf * vg), -1.0, 1.0))


def _footprint(a: VesselnessMap, transform: SimilarityTransform, shape):
    """Integer bounding box of ``a``'s image in a grid of ``shape``."""
    h, w = a.shape
    s = transform.scale
    x0 = max(0, int(math.floor(transform.tx)) - 1)
    y0 = max(0, int(math.floor(transform.ty)) - 1)
    x1 = min(shape[1], int(math.ceil(transform.tx + s * (w - 1))) + 2)
    y1 = min(shape[0], int(math.ceil(transform.ty + s * (h - 1))) + 2)
    return x0, y0, x1, y1


def ncc_overlap(a: VesselnessMap, b: VesselnessMap, transform: SimilarityTransform,
                min_overlap_fraction: float = 0.0):
    """Zero-mean NCC of ``a`` warped onto ``b``, and the overlap pixel count."""
    x0, y0, x1, y1 = _footprint(a, transform, b.shape)
    needed = min_overlap_fraction * np.count_nonzero(a.valid) * transform.scale ** 2
    if x1 <= x0 or y1 <= y0:
        raise InsufficientOverlap("frame falls outside the mosaic")
    vals, valid = warp_to(a, transform.shifted(-x0, -y0), (y1 - y0, x1 - x0))
    both = valid & b.valid[y0:y1, x0:x1]
    count = int(np.count_nonzero(both))
    if count == 0 or count < needed:
        raise InsufficientOverlap(f"overlap {count} px < required {needed:.0f}")
    return _ncc_from(vals[both], b.values[y0:y1, x0:x1][both]), count


def ncc(a: VesselnessMap, b: VesselnessMap, transform: SimilarityTransform,
        min_overlap_fraction: float = 0.0) -> float:
    """Normalised cross-correlation over the overlap of the two valid masks.

    ``a`` is warped into ``b``'s grid by ``transform`` (bilinear values; a
    warped pixel is valid when its whole bilinear stencil is).

    Raises
    ------
    InsufficientOverlap
        If fewer than ``min_overlap_fraction`` of ``a``'s (scaled) valid
        pixels land on valid pixels of ``b``.
    ZeroVariance
        If either signal is constant over the overlap.
    """
    return ncc_overlap(a, b, transform, min_overlap_fraction)[0]


# --------------------------------------------------------------------------
# pyramid

def downsample(vmap: VesselnessMap) -> VesselnessMap:
    """Halve resolution: 2x2 block mean of values, 2x2 AND of validity."""
    h, w = vmap.shape
    h2, w2 = h // 2, w // 2
    v = vmap.values[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    m = vmap.valid[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    return VesselnessMap(v.mean(axis=(1, 3)), m.all(axis=(1, 3)))


def pyramid(vmap: VesselnessMap, levels: int) -> list:
    out = [vmap]
    for _ in range(levels - 1):
        out.append(downsample(out[-1]))
    return out


def to_level(t: SimilarityTransform, level: int) -> SimilarityTransform:
    """Express a full-resolution transform on pyramid ``level``.

    A level-``l`` pixel ``x_l`` covers full-resolution pixels centred on
    ``2^l * x_l + (2^l - 1) / 2``.
    """
    k = 2 ** level
    o = (k - 1) / 2.0
    return SimilarityTransform(t.scale, (t.tx - o * (1 - t.scale)) / k,
                               (t.ty - o * (1 - t.scale)) / k)


def from_level(t: SimilarityTransform, level: int) -> SimilarityTransform:
    k = 2 ** level
    o = (k - 1) / 2.0
    return SimilarityTransform(t.scale, k * t.tx + o * (1 - t.scale),
                               k * t.ty + o * (1 - t.scale))


# --------------------------------------------------------------------------
# exhaustive masked NCC over integer shifts

class _MaskedCorrelator:
    """NCC of a masked template against every integer shift over a masked image.

    Shift ``(dy, dx)`` places template pixel ``q`` on image pixel ``q + d``.
    All window sums are cross-correlations evaluated with FFTs.
    """

    def __init__(self, image: VesselnessMap, template_shape):
        g = np.where(image.valid, image.values, 0.0)
        m = image.valid.astype(np.float64)
        self.image_shape = image.shape
        th, tw = template_shape
        self.full = (image.shape[0] + th - 1, image.shape[1] + tw - 1)
        self.fshape = tuple(fft.next_fast_len(n, real=True) for n in self.full)
        self._m = fft.rfft2(m, self.fshape)
        self._g = fft.rfft2(g, self.fshape)
        self._gg = fft.rfft2(g * g, self.fshape)

    def _corr(self, img_f, tmpl):
        t = fft.rfft2(tmpl[::-1, ::-1], self.fshape)
        out = fft.irfft2(img_f * t, self.fshape)
        return out[:self.full[0], :self.full[1]]

    def scores(self, tvals, tvalid, min_count):
        """Return (ncc, overlap) arrays indexed by ``shift + template_shape - 1``."""
        f = np.where(tvalid, tvals, 0.0)
        mf = tvalid.astype(np.float64)
        n = np.rint(self._corr(self._m, mf))
        sf = self._corr(self._m, f)
        sff = self._corr(self._m, f * f)
        sg = self._corr(self._g, mf)
        sgg = self._corr(self._gg, mf)
        sfg = self._corr(self._g, f)
        with np.errstate(invalid="ignore", divide="ignore"):
            nn = np.maximum(n, 1.0)
            vf = sff - sf * sf / nn
            vg = sgg - sg * sg / nn
            num = sfg - sf * sg / nn
            den = np.sqrt(np.maximum(vf, 0) * np.maximum(vg, 0))
            out = num / den
        ok = (n >= max(min_count, 2)) & (vf > 1e-9 * np.maximum(sff, 1e-12)) \
            & (vg > 1e-9 * np.maximum(sgg, 1e-12))
        out = np.where(ok, np.clip(out, -1.0, 1.0), -np.inf)
        return out, n


def _scaled_template(a: VesselnessMap, scale: float, phase=(0.0, 0.0)):
    """Template ``T(q) = a((q - phase) / scale)`` covering all of ``a``."""
    h, w = a.shape
    th = int(math.ceil(scale * (h - 1) + phase[1])) + 1
    tw = int(math.ceil(scale * (w - 1) + phase[0])) + 1
    return _resample(a, 1.0 / scale, -phase[0], -phase[1], (th, tw))


def _coarse_search(a: VesselnessMap, b: VesselnessMap, config: SearchConfig):
    """Exhaustive search over scales and integer shifts on one level.

    Returns the best transform, its score and the best score found at
    least ``nms_radius`` away (in translation) from it.
    """
    frame_valid = np.count_nonzero(a.valid)
    templates = [(s, *_scaled_template(a, s)) for s in config.scales()]
    th = max(t[1].shape[0] for t in templates)
    tw = max(t[1].shape[1] for t in templates)
    correlator = _MaskedCorrelator(b, (th, tw))
    maps = []
    for s, tvals, tvalid in templates:
        # zero padding at the far edges leaves every window sum unchanged
        pad = ((0, th - tvals.shape[0]), (0, tw - tvals.shape[1]))
        min_count = config.min_overlap_fraction * frame_valid * s * s
        score, _ = correlator.scores(np.pad(tvals, pad), np.pad(tvalid, pad), min_count)
        # score index k corresponds to shift k - (template size - 1)
        maps.append((s, score, th - 1, tw - 1))

    best = None
    for s, score, oy, ox in maps:
        k = int(np.argmax(score))
        val = score.flat[k]
        if np.isfinite(val) and (best is None or val > best[0]):
            ky, kx = np.unravel_index(k, score.shape)
            best = (float(val), s, kx - ox, ky - oy)
    if best is None:
        raise NoValidHypothesis("no hypothesis with enough overlap and variance")

    score0, s0, tx0, ty0 = best
    # competing hypotheses are local maxima over (scale, shift) whose frame
    # centre lands away from the winner's; measuring at the centre keeps the
    # winner's own peak at neighbouring scales from counting as a competitor
    volume = np.stack([m[1] for m in maps])
    peaks = (volume == ndimage.maximum_filter(volume, size=3, mode="constant",
                                              cval=-np.inf)) & np.isfinite(volume)
    h, w = a.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ky, kx = np.mgrid[0:volume.shape[1], 0:volume.shape[2]]
    far = np.empty(volume.shape, dtype=bool)
    for i, (s, _, oy, ox) in enumerate(maps):
        dx = (kx - ox + s * cx) - (tx0 + s0 * cx)
        dy = (ky - oy + s * cy) - (ty0 + s0 * cy)
        far[i] = np.hypot(dx, dy) > config.nms_radius
    cand = volume[peaks & far]
    second = float(cand.max()) if cand.size else -np.inf
    return SimilarityTransform(float(s0), float(tx0), float(ty0)), score0, second


def _refine(a: VesselnessMap, b: VesselnessMap, t: SimilarityTransform,
            scale_delta: float, config: SearchConfig):
    """Local search around ``t``: three scales, integer offsets within the radius.

    Scale candidates keep the frame centre fixed so that scale and
    translation errors do not couple.
    """
    h, w = a.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    r = config.refine_radius
    frame_valid = np.count_nonzero(a.valid)
    best = None
    for ds in (0.0, -scale_delta, scale_delta):
        s = t.scale + ds
        # refinement stays inside the searched scale range
        if not config.scale_min - 1e-9 <= s <= config.scale_max + 1e-9:
            continue
        tx = t.tx - ds * cx
        ty = t.ty - ds * cy
        nx, ny = math.floor(tx), math.floor(ty)
        phase = (tx - nx, ty - ny)
        tvals, tvalid = _scaled_template(a, s, phase)
        th, tw = tvals.shape
        min_count = config.min_overlap_fraction * frame_valid * s * s
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                ox, oy = nx + dx, ny + dy
                # clip template placement to the image
                x0, y0 = max(ox, 0), max(oy, 0)
                x1, y1 = min(ox + tw, b.shape[1]), min(oy + th, b.shape[0])
                if x1 <= x0 or y1 <= y0:
                    continue
                tv = tvalid[y0 - oy:y1 - oy, x0 - ox:x1 - ox] & b.valid[y0:y1, x0:x1]
                cnt = np.count_nonzero(tv)
                if cnt < max(min_count, 2):
                    continue
                try:
                    val = _ncc_from(tvals[y0 - oy:y1 - oy, x0 - ox:x1 - ox][tv],
                                    b.values[y0:y1, x0:x1][tv])
                except ZeroVariance:
                    continue
                if best is None or val > best[0]:
                    best = (val, SimilarityTransform(s, tx + dx, ty + dy))
    return best


def _climb(a_level, b_level, t, level, delta, config, max_iter=4):
    """Repeat the local search at one level until the centre hypothesis wins."""
    for _ in range(max_iter):
        found = _refine(a_level, b_level, to_level(t, level), delta, config)
        if found is None:
            break
        new_t = from_level(found[1], level)
        if new_t == t:
            break
        t = new_t
    return t


def _try_ncc(a, b, t):
    try:
        return ncc(a, b, t)
    except (InsufficientOverlap, ZeroVariance):
        return None


def _quadratic_peak(f0, axis, diag):
    """Peak offset of the quadratic through a ten-sample stencil.

    ``axis[i] = (f(-e_i), f(+e_i))`` and ``diag[(i, j)] = f(e_i + e_j)``,
    in units of the probe steps. The offset is shrunk to at most one step
    per axis; None if the fit has no maximum.
    """
    g = np.array([(fp - fm) / 2.0 for fm, fp in axis])
    hess = np.diag([fp + fm - 2.0 * f0 for fm, fp in axis])
    for (i, j), fij in diag.items():
        hess[i, j] = hess[j, i] = fij - f0 - g[i] - g[j] - 0.5 * (hess[i, i] + hess[j, j])
    if np.linalg.eigvalsh(hess).max() >= 0:
        return None
    u = -np.linalg.solve(hess, g)
    return u / max(1.0, float(np.abs(u).max()))


def _polish(a, b, t, scale_delta, config, rounds=4):
    """Sub-grid peak location from a local quadratic fit in (tx, ty, scale).

    The grid search leaves steps of one pixel and ``scale_delta``; a
    smoothly zooming sequence would otherwise accumulate the same
    rounding error frame after frame. Scale and translation are coupled,
    so the fit includes the cross terms. Each round moves to the fitted
    peak if it scores higher and otherwise halves the probe steps. Scale
    moves keep the frame centre fixed.
    """
    h, w = a.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    def moved(t, u, step, ds):
        d = float(u[2]) * ds
        return SimilarityTransform(t.scale + d, t.tx - d * cx + float(u[0]) * step,
                                   t.ty - d * cy + float(u[1]) * step)

    def score(t):
        if not config.scale_min - 1e-9 <= t.scale <= config.scale_max + 1e-9:
            return None
        return _try_ncc(a, b, t)

    f0 = score(t)
    if f0 is None:
        return t
    step, ds = 1.0, scale_delta
    eye = np.eye(3)
    for _ in range(rounds):
        axis = [(score(moved(t, -eye[i], step, ds)),
                 score(moved(t, eye[i], step, ds))) for i in range(3)]
        diag = {(i, j): score(moved(t, eye[i] + eye[j], step, ds))
                for i, j in ((0, 1), (0, 2), (1, 2))}
        samples = [v for pair in axis for v in pair] + list(diag.values())
        best_t, best = t, f0
        if None not in samples:
            u = _quadratic_peak(f0, axis, diag)
            if u is not None:
                cand = moved(t, u, step, ds)
                f1 = score(cand)
                if f1 is not None and f1 > best:
                    best_t, best = cand, f1
        if best_t is t:
            # fall back to the best probe, else tighten the stencil
            for k, v in enumerate(samples[:6]):
                if v is not None and v > best:
                    best = v
                    best_t = moved(t, (1 if k % 2 else -1) * eye[k // 2], step, ds)
        if best_t is t:
            step, ds = step / 2, ds / 2
        t, f0 = best_t, best
    return t


def register(frame_v: VesselnessMap, mosaic_v: VesselnessMap,
             config: SearchConfig | None = None) -> RegistrationResult:
    """Find the scale + translation mapping ``frame_v`` onto ``mosaic_v``.

    Returns
    -------
    RegistrationResult
        ``accepted`` is True only when the final score beats
        ``ambiguity_factor`` times the best competing coarse-level peak
        (clamped at zero) and the overlap requirement holds.
    """
    config = config or SearchConfig()
    if not frame_v.valid.any() or not mosaic_v.valid.any():
        raise NoValidHypothesis("empty valid region")
    levels = config.pyramid_levels
    pa = pyramid(frame_v, levels)
    pb = pyramid(mosaic_v, levels)
    top = levels - 1
    while top > 0 and (not pa[top].valid.any() or not pb[top].valid.any()):
        top -= 1

    coarse_t, coarse_score, second = _coarse_search(pa[top], pb[top], config)
    projected = from_level(coarse_t, top)
    t = projected
    for step, level in enumerate(range(top - 1, -1, -1), start=1):
        t = _climb(pa[level], pb[level], t, level,
                   config.scale_step_coarse / 2 ** step, config)
    t = _polish(frame_v, mosaic_v, t, config.scale_step_coarse / 2 ** max(top, 1), config)

    candidates = [t] if t == projected else [t, projected]
    best = None
    for cand in candidates:
        try:
            score, overlap = ncc_overlap(frame_v, mosaic_v, cand)
        except (InsufficientOverlap, ZeroVariance):
            continue
        if best is None or score > best[0]:
            best = (score, overlap, cand)
    if best is None:
        raise NoValidHypothesis("refined hypothesis lost its overlap")
    score, overlap, t = best
    needed = config.min_overlap_fraction * np.count_nonzero(frame_v.valid) * t.scale ** 2
    # the margin must hold for the refined score and, like for like, for the
    # coarse-level winner against its coarse-level competitors
    bar = config.ambiguity_factor * max(second, 0.0)
    accepted = overlap >= needed and score >= bar and coarse_score >= bar
    return RegistrationResult(t, score, float(second), bool(accepted), overlap,
                              float(coarse_score))
