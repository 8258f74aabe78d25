"""Mosaicking of narrow-field retinal video frames."""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .imgcore import Frame
from .pipeline import Config, PipelineOutput, analyze_frame, run
from .registration import SearchConfig, SimilarityTransform, register
from .stitcher import MosaicState

__all__ = ["Frame", "Config", "PipelineOutput", "analyze_frame", "run", "SearchConfig",
           "SimilarityTransform", "register", "MosaicState", "__version__"]
