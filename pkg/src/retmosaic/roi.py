"""Elliptical region-of-interest detection.

The fundus shows up as a bright, roughly elliptical disc. We threshold
the frame with Otsu, keep the largest blob, and fit an ellipse to its
outline with a small genetic algorithm whose chromosomes are five
points on the candidate ellipse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import imgcore
from .errors import (ImplausibleRoi, InsufficientEdges, InvalidConfig,
                     NotAnEllipse, SingularConfiguration)

# relative singular-value floor below which the 5x5 system is rank deficient
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class ConicCoeffs:
    """``x^2 + k_xy*x*y + k_yy*y^2 + k_x*x + k_y*y + k = 0``."""

    k_xy: float
    k_yy: float
    k_x: float
    k_y: float
    k: float

    @property
    def discriminant(self) -> float:
        return self.k_xy ** 2 - 4.0 * self.k_yy

    @property
    def is_ellipse(self) -> bool:
        return self.discriminant < 0

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return (x * x + self.k_xy * x * y + self.k_yy * y * y
                + self.k_x * x + self.k_y * y + self.k)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.k_xy, self.k_yy, self.k_x, self.k_y, self.k)


@dataclass(frozen=True)
class CanonicalEllipse:
    a: float
    b: float
    x0: float
    y0: float
    theta: float

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "x0": self.x0, "y0": self.y0,
                "theta": self.theta}


@dataclass
class GaConfig:
    population_size: int = 100
    generations: int = 200
    crossover_rate: float = 0.8
    mutation_rate: float = 0.1
    mutation_sigma: float = 5.0
    tournament_size: int = 3
    elite_count: int = 2
    n_samples: int = 360
    seed: int = 0

    def __post_init__(self):
        if self.population_size < self.elite_count + 2:
            raise InvalidConfig("population_size must be >= elite_count + 2")
        if self.tournament_size < 2:
            raise InvalidConfig("tournament_size must be >= 2")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise InvalidConfig("rates must lie in [0, 1]")
        if self.n_samples < 8:
            raise InvalidConfig("n_samples must be >= 8")
        if self.generations < 0 or self.elite_count < 0:
            raise InvalidConfig("counts must be non-negative")


@dataclass
class RoiResult:
    ellipse: CanonicalEllipse
    conic: ConicCoeffs
    fitness: float
    mask: np.ndarray
    agreement: float = field(default=float("nan"))


# --------------------------------------------------------------------------
# conic algebra

def _design(u, v):
    """5x5 systems ``M @ (k_xy, k_yy, k_x, k_y, k) = -u^2`` for (..., 5) points."""
    m = np.stack([u * v, v * v, u, v, np.ones_like(u)], axis=-1)
    return m, -u * u


def _hadamard_ratio(m):
    """|det M| / prod(row norms): 1 for orthogonal rows, 0 for singular M."""
    norms = np.prod(np.linalg.norm(m, axis=-1), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs(np.linalg.det(m)) / norms
    return np.where(norms > 0, r, 0.0)


def _denormalize(coeffs, mx, my, sc):
    """Map conic coefficients from ``u=(x-mx)/sc`` coordinates back to x, y."""
    b, c, d, e, f = coeffs
    kx = -2 * mx - b * my + d * sc
    ky = -b * mx - 2 * c * my + e * sc
    k = (mx * mx + b * mx * my + c * my * my
         - d * sc * mx - e * sc * my + f * sc * sc)
    return b, c, kx, ky, k


def conic_from_points(points) -> ConicCoeffs:
    """Conic through five points, leading ``x^2`` coefficient fixed to 1.

    The linear system is solved in centred, unit-scaled coordinates for
    conditioning and mapped back afterwards.

    Raises
    ------
    SingularConfiguration
        If the points do not pin down a conic of this form.
    NotAnEllipse
        If the conic through the points is not an ellipse.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (5, 2):
        raise ValueError(f"expected five (x, y) points, got shape {pts.shape}")
    mx, my = pts.mean(axis=0)
    sc = float(np.sqrt(((pts - (mx, my)) ** 2).sum(axis=1).mean()))
    if sc == 0:
        raise SingularConfiguration("points coincide")
    u = (pts[:, 0] - mx) / sc
    v = (pts[:, 1] - my) / sc
    m, rhs = _design(u, v)
    if _hadamard_ratio(m) <= _RANK_TOL:
        raise SingularConfiguration("five-point system is rank deficient")
    sol = np.linalg.solve(m, rhs)
    conic = ConicCoeffs(*(float(c) for c in _denormalize(sol, mx, my, sc)))
    if not conic.is_ellipse:
        raise NotAnEllipse(f"discriminant {conic.discriminant:.3g} >= 0")
    return conic


def _canonical_arrays(kxy, kyy, kx, ky, k):
    """Vectorised canonical form; returns (a, b, x0, y0, theta, ok)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = kxy * kxy - 4.0 * kyy
        psi = ky * ky + kyy * kx * kx - kxy * kx * ky + disc * k
        root = np.sqrt((1.0 - kyy) ** 2 + kxy * kxy)
        psi1 = 1.0 + kyy + root
        psi2 = 1.0 + kyy - root
        a = -np.sqrt(2.0 * psi * psi1) / disc
        b = -np.sqrt(2.0 * psi * psi2) / disc
        x0 = (2.0 * kyy * kx - kxy * ky) / disc
        y0 = (2.0 * ky - kxy * kx) / disc
        # major axis is the eigenvector of the smaller quadratic-form eigenvalue
        theta = np.mod(0.5 * np.arctan2(-kxy, kyy - 1.0), np.pi)
    # fold the rounding-noise neighbourhood of pi back onto 0
    theta = np.where(theta >= np.pi - 1e-12, 0.0, theta)
    ok = (disc < 0) & np.isfinite(a) & np.isfinite(b) & (b > 0) \
        & np.isfinite(x0) & np.isfinite(y0)
    return a, b, x0, y0, theta, ok


def canonical_from_conic(conic: ConicCoeffs) -> CanonicalEllipse:
    """Semi-axes, centre and orientation of an elliptical conic."""
    if not conic.is_ellipse:
        raise NotAnEllipse(f"discriminant {conic.discriminant:.3g} >= 0")
    a, b, x0, y0, theta, ok = _canonical_arrays(*map(np.float64, conic.as_tuple()))
    if not ok:
        raise NotAnEllipse("conic has no real points")
    return CanonicalEllipse(float(a), float(b), float(x0), float(y0), float(theta))


def conic_from_canonical(e: CanonicalEllipse) -> ConicCoeffs:
    """Implicit form of a canonical ellipse, normalised so x^2 has unit weight."""
    c, s = math.cos(e.theta), math.sin(e.theta)
    ia, ib = 1.0 / (e.a * e.a), 1.0 / (e.b * e.b)
    A = c * c * ia + s * s * ib
    B = 2.0 * c * s * (ia - ib)
    C = s * s * ia + c * c * ib
    D = -2.0 * A * e.x0 - B * e.y0
    E = -B * e.x0 - 2.0 * C * e.y0
    F = A * e.x0 ** 2 + B * e.x0 * e.y0 + C * e.y0 ** 2 - 1.0
    return ConicCoeffs(B / A, C / A, D / A, E / A, F / A)


def _sample_arrays(a, b, x0, y0, theta, n_s):
    t = 2.0 * np.pi * np.arange(n_s) / n_s
    ct, st = np.cos(t), np.sin(t)
    a, b, x0, y0, theta = (np.asarray(v, dtype=np.float64)[..., None]
                           for v in (a, b, x0, y0, theta))
    c, s = np.cos(theta), np.sin(theta)
    xs = (a * c) * ct - (b * s) * st
    xs += x0
    ys = (a * s) * ct + (b * c) * st
    ys += y0
    return xs, ys


def sample_circumference(ellipse: CanonicalEllipse, n_s: int) -> np.ndarray:
    """``n_s`` points at uniform parametric angle, as an (n_s, 2) array of (x, y)."""
    xs, ys = _sample_arrays(ellipse.a, ellipse.b, ellipse.x0, ellipse.y0,
                            ellipse.theta, n_s)
    return np.stack([xs, ys], axis=-1)


# --------------------------------------------------------------------------
# fitness and search

def dilate_edges(edges: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(np.asarray(edges, dtype=bool),
                                   structure=np.ones((3, 3), dtype=bool))


def _score_samples(xs, ys, tolerant_edges):
    h, w = tolerant_edges.shape
    # a false border ring absorbs every sample that falls off the image
    padded = np.pad(tolerant_edges, 1).ravel()
    xi = np.clip(np.rint(xs), -1, w).astype(np.int64)
    yi = np.clip(np.rint(ys), -1, h).astype(np.int64)
    hits = padded[(yi + 1) * (w + 2) + (xi + 1)]
    return hits.mean(axis=-1)


def fitness(conic: ConicCoeffs, edges: np.ndarray, n_s: int = 360,
            *, tolerant_edges: np.ndarray | None = None) -> float:
    """Fraction of circumference samples landing on (1-px dilated) edge pixels.

    ``tolerant_edges`` lets callers pass a pre-dilated mask.
    """
    e = canonical_from_conic(conic)
    if tolerant_edges is None:
        tolerant_edges = dilate_edges(edges)
    xs, ys = _sample_arrays(e.a, e.b, e.x0, e.y0, e.theta, n_s)
    return float(_score_samples(xs, ys, tolerant_edges))


class _PopulationScorer:
    """Batched chromosome -> fitness evaluation in normalised coordinates.

    Sample coordinates are built in reused buffers; at GA population
    sizes the temporaries otherwise dominate the run time.
    """

    def __init__(self, tolerant_edges: np.ndarray, n_s: int):
        h, w = tolerant_edges.shape
        self.h, self.w = h, w
        self.padded = np.pad(tolerant_edges, 1).ravel()
        self.n_s = n_s
        t = 2.0 * np.pi * np.arange(n_s) / n_s
        self.ct, self.st = np.cos(t), np.sin(t)
        self.cx, self.cy = (w - 1) / 2.0, (h - 1) / 2.0
        self.sc = max(h, w) / 2.0
        self._bufs = {}

    def _buffers(self, n):
        if n not in self._bufs:
            self._bufs[n] = tuple(np.empty((n, self.n_s)) for _ in range(3))
        return self._bufs[n]

    def _hits(self, a, b, x0, y0, theta):
        n = a.size
        xs, ys, tmp = self._buffers(n)
        c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
        a, b = a[:, None], b[:, None]
        # same arithmetic as _sample_arrays, written into the buffers
        np.multiply(a * c, self.ct, out=xs)
        np.multiply(b * s, self.st, out=tmp)
        xs -= tmp
        xs += x0[:, None]
        np.multiply(a * s, self.ct, out=ys)
        np.multiply(b * c, self.st, out=tmp)
        ys += tmp
        ys += y0[:, None]
        # rounding and the off-image ring as in _score_samples
        np.rint(xs, out=xs)
        np.clip(xs, -1, self.w, out=xs)
        np.rint(ys, out=ys)
        np.clip(ys, -1, self.h, out=ys)
        ys += 1.0
        ys *= self.w + 2
        ys += xs
        ys += 1.0
        return self.padded[ys.astype(np.int64)].mean(axis=-1)

    def __call__(self, chrom: np.ndarray) -> np.ndarray:
        p = chrom.shape[0]
        u = (chrom[..., 0] - self.cx) / self.sc
        v = (chrom[..., 1] - self.cy) / self.sc
        m, rhs = _design(u, v)
        good = _hadamard_ratio(m) > _RANK_TOL
        out = np.zeros(p)
        if not good.any():
            return out
        sol = np.linalg.solve(m[good], rhs[good][..., None])[..., 0]
        a, b, x0, y0, theta, ok = _canonical_arrays(*sol.T)
        idx = np.flatnonzero(good)[ok]
        if idx.size == 0:
            return out
        out[idx] = self._hits(a[ok] * self.sc, b[ok] * self.sc,
                              x0[ok] * self.sc + self.cx,
                              y0[ok] * self.sc + self.cy, theta[ok])
        return out


def fit_ellipse_ga(edges: np.ndarray, config: GaConfig | None = None,
                   *, history: list | None = None):
    """Genetic-algorithm ellipse fit to an edge mask.

    Parameters
    ----------
    edges : (H, W) bool ndarray
    config : GaConfig, optional
    history : list, optional
        If given, the best fitness of every generation is appended to it.

    Returns
    -------
    conic : ConicCoeffs
    fitness : float
        Fitness of ``conic`` against ``edges``.
    """
    config = config or GaConfig()
    edges = np.asarray(edges, dtype=bool)
    ey, ex = np.nonzero(edges)
    if ex.size < 5:
        raise InsufficientEdges(f"{ex.size} edge pixels, need at least 5")
    h, w = edges.shape
    rng = np.random.default_rng(config.seed)
    tolerant = dilate_edges(edges)
    score = _PopulationScorer(tolerant, config.n_samples)

    pop_n = config.population_size
    n_child = pop_n - config.elite_count
    n_pairs = (n_child + 1) // 2

    # initial population: five distinct edge pixels per chromosome
    picks = np.stack([rng.choice(ex.size, size=5, replace=False)
                      for _ in range(pop_n)])
    pop = np.stack([ex[picks], ey[picks]], axis=-1).astype(np.float64)
    fit = score(pop)

    for _ in range(config.generations):
        order = np.argsort(-fit, kind="stable")
        pop, fit = pop[order], fit[order]
        if history is not None:
            history.append(float(fit[0]))

        contenders = rng.integers(pop_n, size=(n_pairs, 2, config.tournament_size))
        do_cross = rng.random(n_pairs) < config.crossover_rate
        cuts = rng.integers(1, 5, size=n_pairs)
        mutate = rng.random((2 * n_pairs, 5)) < config.mutation_rate
        noise = rng.normal(0.0, config.mutation_sigma, size=(2 * n_pairs, 5, 2))

        # population is sorted, so the lowest index wins each tournament
        parents = pop[contenders.min(axis=2)]
        first, second = parents[:, 0].copy(), parents[:, 1].copy()
        swap = (np.arange(5)[None, :] >= cuts[:, None]) & do_cross[:, None]
        first[swap], second[swap] = parents[:, 1][swap], parents[:, 0][swap]
        children = np.concatenate([first, second])
        children = children + np.where(mutate[..., None], noise, 0.0)
        children = np.rint(children)
        np.clip(children[..., 0], 0, w - 1, out=children[..., 0])
        np.clip(children[..., 1], 0, h - 1, out=children[..., 1])
        children = children[:n_child]

        pop = np.concatenate([pop[:config.elite_count], children])
        fit = np.concatenate([fit[:config.elite_count], score(children)])

    best = pop[int(np.argmax(fit))]
    if history is not None:
        history.append(float(fit.max()))
    conic = conic_from_points(best)
    return conic, fitness(conic, edges, config.n_samples, tolerant_edges=tolerant)


def ellipse_mask(conic: ConicCoeffs, shape) -> np.ndarray:
    """Pixels strictly inside the conic (implicit value < 0)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    return conic.evaluate(xx, yy) < 0


def detect_roi(frame: imgcore.Frame, config: GaConfig | None = None,
               *, min_agreement: float = 0.0) -> RoiResult:
    """Locate the fundus ellipse in a frame.

    ``min_agreement`` rejects fits whose intersection-over-union with the
    hole-filled Otsu foreground falls below it (``ImplausibleRoi``);
    unstructured frames such as pure noise are caught this way.
    """
    gray = imgcore.to_grayscale(frame)
    fg = imgcore.binarize(gray, imgcore.otsu_threshold(gray))
    blob = imgcore.largest_component(fg)
    edges = imgcore.contour(blob)
    conic, fit = fit_ellipse_ga(edges, config)
    ellipse = canonical_from_conic(conic)
    mask = ellipse_mask(conic, frame.shape)

    filled = ndimage.binary_fill_holes(blob)
    union = np.count_nonzero(mask | filled)
    agreement = np.count_nonzero(mask & filled) / union if union else 0.0
    if agreement < min_agreement:
        raise ImplausibleRoi(
            f"ellipse/foreground overlap {agreement:.2f} < {min_agreement:.2f}")
    return RoiResult(ellipse, conic, fit, mask, agreement)
