"""Multiscale Hessian vesselness and frame-quality scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyValidRegion, InvalidConfig, NoUsableFrames


@dataclass
class FrangiConfig:
    beta: float = 0.75
    c: float = 15.0
    scales: list = field(default_factory=lambda: [3.0, 4.0, 5.0])
    polarity: str = "dark"  # "dark": dark vessels on a bright background

    def __post_init__(self):
        if self.beta <= 0 or self.c <= 0:
            raise InvalidConfig("beta and c must be positive")
        if not self.scales or min(self.scales) < 1:
            raise InvalidConfig("scales must be non-empty and >= 1")
        if self.polarity not in ("dark", "bright"):
            raise InvalidConfig(f"unknown polarity {self.polarity!r}")


@dataclass
class VesselnessMap:
    """Per-pixel vesselness in [0, 1], zero outside ``valid``."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        self.values = np.where(self.valid, np.asarray(self.values, dtype=np.float64), 0.0)

    @property
    def shape(self):
        return self.values.shape


def gaussian_kernels(s: float):
    """Sampled Gaussian and its first two derivatives on ``[-ceil(3s), ceil(3s)]``.

    Truncation and sampling leave the raw kernels slightly off, most
    visibly a non-zero sum of the second derivative, which would make the
    Hessian respond to flat regions in proportion to their brightness.
    The kernels are therefore renormalised so that correlation with them
    is exact on polynomials up to the order they differentiate: ``g``
    sums to 1, ``g1`` has first moment -1 and ``g2`` sums to 0 with
    second moment 2.
    """
    r = int(math.ceil(3 * s))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-x * x / (2 * s * s))
    g /= g.sum()
    g1 = -x / (s * s) * g
    g1 /= -np.dot(x, g1)
    g2 = (x * x / s ** 4 - 1 / (s * s)) * g
    g2 -= g2.mean()
    g2 /= 0.5 * np.dot(x * x, g2)
    return g, g1, g2


def hessian(gray: np.ndarray, s: float):
    """Scale-normalised (gamma = 2) Hessian entries ``(Hxx, Hxy, Hyy)``."""
    img = np.asarray(gray, dtype=np.float64)
    g, g1, g2 = gaussian_kernels(s)

    def sep(kx, ky):
        tmp = ndimage.correlate1d(img, kx, axis=1, mode="reflect")
        return ndimage.correlate1d(tmp, ky, axis=0, mode="reflect")

    norm = s * s
    return norm * sep(g2, g), norm * sep(g1, g1), norm * sep(g, g2)


def eigen_sym2(hxx, hxy, hyy):
    """Eigenvalues of symmetric 2x2 matrices ordered so ``|l1| <= |l2|``."""
    half_tr = 0.5 * (hxx + hyy)
    root = np.sqrt((0.5 * (hxx - hyy)) ** 2 + hxy * hxy)
    mu1, mu2 = half_tr + root, half_tr - root
    swap = np.abs(mu1) > np.abs(mu2)
    return np.where(swap, mu2, mu1), np.where(swap, mu1, mu2)


def hessian_eigen(gray: np.ndarray, s: float):
    if s < 1:
        raise ValueError("scale must be >= 1")
    return eigen_sym2(*hessian(gray, s))


def vesselness_at_scale(l1, l2, beta: float = 0.75, c: float = 15.0,
                        polarity: str = "bright"):
    """Frangi response from ordered eigenvalues.

    Zero where the larger eigenvalue has the wrong sign for the polarity
    (positive for bright ridges) or vanishes.
    """
    l1 = np.asarray(l1, dtype=np.float64)
    l2 = np.asarray(l2, dtype=np.float64)
    wrong_sign = l2 > 0 if polarity == "bright" else l2 < 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rb2 = (l1 / l2) ** 2
        s2 = l1 * l1 + l2 * l2
        v = np.exp(-rb2 / (2 * beta * beta)) * (1 - np.exp(-s2 / (2 * c * c)))
    return np.where(wrong_sign | (l2 == 0), 0.0, v)


def vesselness(gray: np.ndarray, valid: np.ndarray,
               config: FrangiConfig | None = None) -> VesselnessMap:
    """Maximum response over the configured scales, masked to ``valid``."""
    config = config or FrangiConfig()
    gray = np.asarray(gray, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if gray.shape != valid.shape:
        raise ValueError(f"shape mismatch {gray.shape} vs {valid.shape}")
    if config.polarity == "dark":
        # inversion turns dark vessels into bright ridges; the Hessian ignores the offset
        gray = -gray
    best = np.zeros_like(gray)
    for s in config.scales:
        l1, l2 = hessian_eigen(gray, s)
        np.maximum(best, vesselness_at_scale(l1, l2, config.beta, config.c), out=best)
    return VesselnessMap(best, valid)


def entropy_score(vmap: VesselnessMap, bins: int = 256) -> float:
    """Shannon entropy (bits) of the vesselness histogram over valid pixels."""
    vals = vmap.values[vmap.valid]
    if vals.size == 0:
        raise EmptyValidRegion("vesselness map has no valid pixels")
    hist, _ = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    p = hist[hist > 0] / vals.size
    return float(-(p * np.log2(p)).sum()) + 0.0


def select_start_frame(scores, usable) -> int:
    """Index of the usable frame with the highest entropy (earliest on ties)."""
    best, best_score = None, -math.inf
    for i, (score, ok) in enumerate(zip(scores, usable)):
        if ok and score > best_score:
            best, best_score = i, score
    if best is None:
        raise NoUsableFrames("no usable frame to start from")
    return best
