"""End-to-end mosaicking of a frame sequence.

Every frame is analysed independently (ROI, glare, vesselness, entropy).
The frame with the richest vessel content starts the mosaic; the rest
are registered against the growing mosaic, first forwards in time from
the start frame and then backwards, and blended in when the match is
unambiguous.
"""
from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import __version__
from .errors import (EmptyOverlap, EmptyValidRegion, InvalidConfig, MosaicError,
                     NoUsableFrames, NoValidHypothesis)
from .glare import GlareConfig, detect_glare
from .imgcore import Frame
from .registration import RegistrationResult, SearchConfig, SimilarityTransform, register
from .roi import CanonicalEllipse, GaConfig, RoiResult, detect_roi
from .stitcher import (WEIGHTING_MODES, MosaicState, blend, frame_weights, gain_overlap,
                       illumination_gain)
from .vesselness import (FrangiConfig, VesselnessMap, entropy_score, select_start_frame,
                         vesselness)

STATUSES = ("used", "rejected_roi", "rejected_quality", "rejected_registration", "error")


@dataclass
class Config:
    """All tunables of a run. ``roi.seed`` is ignored: GA seeds derive from ``seed``."""

    roi: GaConfig = field(default_factory=GaConfig)
    glare: GlareConfig = field(default_factory=GlareConfig)
    frangi: FrangiConfig = field(default_factory=FrangiConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    weighting: str = "direct"
    quality_gate_fraction: float = 0.3
    # ROI plausibility: IoU of the fitted ellipse with the filled foreground
    min_roi_agreement: float = 0.8
    # fraction of the ROI that must survive glare removal
    min_valid_fraction: float = 0.1
    # central frame pixels (distance >= this x max distance) serve as the
    # brightness reference for gain estimation
    gain_core_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.weighting not in WEIGHTING_MODES:
            raise InvalidConfig(f"weighting must be one of {WEIGHTING_MODES}")
        for name in ("quality_gate_fraction", "min_roi_agreement", "min_valid_fraction",
                     "gain_core_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")

    _SECTIONS = {"roi": GaConfig, "glare": GlareConfig, "frangi": FrangiConfig,
                 "search": SearchConfig}

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key, value in d.items():
            section = cls._SECTIONS.get(key)
            if section is None:
                kw[key] = value
                continue
            if not isinstance(value, dict):
                raise InvalidConfig(f"section {key!r} must be an object")
            names = {f.name for f in dataclasses.fields(section)}
            bad = set(value) - names
            if bad:
                raise InvalidConfig(f"unknown keys in {key!r}: {sorted(bad)}")
            kw[key] = section(**value)
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "Config":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class FrameAnalysis:
    """Per-frame processing outcome; ``status`` is "ok" or a rejection status."""

    index: int
    status: str = "ok"
    reason: str = ""
    roi: RoiResult | None = None
    glare: np.ndarray | None = None
    vessels: VesselnessMap | None = None
    entropy: float | None = None
    weights: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class FrameReport:
    index: int
    status: str
    entropy: float | None = None
    roi: CanonicalEllipse | None = None
    # frame -> start-frame coordinates
    transform: SimilarityTransform | None = None
    score: float | None = None
    second_score: float | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "status": self.status,
            "entropy": self.entropy,
            "roi": self.roi.to_dict() if self.roi is not None else None,
            "transform": self.transform.to_dict() if self.transform is not None else None,
            "score": self.score,
            "second_score": self.second_score,
            "reason": self.reason,
        }


@dataclass
class PipelineOutput:
    mosaic: MosaicState
    reports: list
    start_index: int

    def report_dict(self, config: Config) -> dict:
        return {
            "version": __version__,
            "start_index": self.start_index,
            "origin_offset": list(self.mosaic.origin_offset),
            "config": config.to_dict(),
            "frames": [r.to_dict() for r in self.reports],
        }

    def report_json(self, config: Config) -> str:
        return json.dumps(self.report_dict(config), indent=2, sort_keys=True)

    @property
    def used(self) -> list:
        return [r for r in self.reports if r.status == "used"]


def frame_seed(frame: Frame, seed: int) -> int:
    """GA seed for one frame, a function of the run seed and the pixel content.

    Tying the seed to the content rather than the position keeps a
    frame's ROI fit unchanged when other frames are added or removed.
    """
    crc = zlib.crc32(np.ascontiguousarray(frame.rgb).tobytes())
    return int(np.random.SeedSequence([seed, crc]).generate_state(1)[0])


def fill_invalid(gray: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace pixels outside ``valid`` by their nearest valid value.

    Removes the steps at the ROI rim and around glare, which the Hessian
    filter would otherwise report as vessel-like edges.
    """
    if valid.all():
        return gray
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return gray[iy, ix]


def analyze_frame(frame: Frame, config: Config | None = None) -> FrameAnalysis:
    """ROI, glare, vesselness and entropy for one frame; never raises on bad frames."""
    config = config or Config()
    out = FrameAnalysis(frame.index)
    try:
        ga = dataclasses.replace(config.roi, seed=frame_seed(frame, config.seed))
        out.roi = detect_roi(frame, ga, min_agreement=config.min_roi_agreement)
    except MosaicError as exc:
        out.status, out.reason = "rejected_roi", f"{type(exc).__name__}: {exc}"
        return out
    try:
        out.glare = detect_glare(frame, out.roi.mask, config.glare)
        valid = out.roi.mask & ~out.glare
        n_roi = np.count_nonzero(out.roi.mask)
        if np.count_nonzero(valid) < max(config.min_valid_fraction * n_roi, 1):
            raise EmptyValidRegion("too little of the ROI is free of glare")
        gray = fill_invalid(frame.green, valid)
        out.vessels = vesselness(gray, valid, config.frangi)
        out.entropy = entropy_score(out.vessels)
        out.weights = frame_weights(out.roi.mask, out.glare)
    except EmptyValidRegion as exc:
        out.status, out.reason = "rejected_quality", str(exc)
    except Exception as exc:  # a single bad frame must not abort the run
        out.status, out.reason = "error", f"{type(exc).__name__}: {exc}"
    return out


def _report_from(a: FrameAnalysis) -> FrameReport:
    r = FrameReport(a.index, "error" if a.ok else a.status, a.entropy, reason=a.reason)
    if a.roi is not None:
        r.roi = a.roi.ellipse
    return r


def _add_frame(mosaic: MosaicState, frame: Frame, a: FrameAnalysis, report: FrameReport,
               config: Config, start_entropy: float) -> None:
    if a.entropy < config.quality_gate_fraction * start_entropy:
        report.status = "rejected_quality"
        report.reason = f"entropy {a.entropy:.3f} below gate"
        return
    try:
        res: RegistrationResult = register(a.vessels, mosaic.vessel_fused, config.search)
    except NoValidHypothesis as exc:
        report.status, report.reason = "rejected_registration", str(exc)
        return
    report.score, report.second_score = res.score, res.second_score
    report.transform = mosaic.to_start_frame(res.transform)
    if not res.accepted:
        report.status = "rejected_registration"
        report.reason = "ambiguous or insufficient overlap"
        return
    try:
        core = gain_overlap(mosaic, a.weights, res.transform)
        gain = illumination_gain(frame, mosaic, res.transform, core,
                                 reference=mosaic.core_displayed())
    except EmptyOverlap:
        gain = np.ones(3)
    blend(mosaic, frame, a.vessels, a.weights, res.transform, gain, config.weighting)
    report.status, report.reason = "used", ""


def run(frames, config: Config | None = None, *, analyses=None) -> PipelineOutput:
    """Build a mosaic from an ordered frame sequence.

    Parameters
    ----------
    frames : sequence of Frame
        In temporal order.
    config : Config, optional
    analyses : sequence of FrameAnalysis, optional
        Precomputed results of :func:`analyze_frame`, one per frame.

    Raises
    ------
    NoUsableFrames
        If no frame survives analysis.
    """
    config = config or Config()
    frames = list(frames)
    if not frames:
        raise NoUsableFrames("no input frames")
    if analyses is None:
        analyses = [analyze_frame(f, config) for f in frames]
    reports = [_report_from(a) for a in analyses]

    entropies = [a.entropy if a.ok else 0.0 for a in analyses]
    start = select_start_frame(entropies, [a.ok for a in analyses])
    s = analyses[start]
    mosaic = MosaicState.empty(frames[start].shape, config.gain_core_fraction)
    blend(mosaic, frames[start], s.vessels, s.weights, SimilarityTransform.identity(),
          weighting=config.weighting)
    reports[start].status = "used"
    reports[start].transform = SimilarityTransform.identity()

    order = list(range(start + 1, len(frames))) + list(range(start - 1, -1, -1))
    for i in order:
        if analyses[i].ok:
            _add_frame(mosaic, frames[i], analyses[i], reports[i], config, s.entropy)
    return PipelineOutput(mosaic, reports, start)
