"""Exception types raised by the mosaicking stages."""


class MosaicError(Exception):
    """Base class for all stage failures."""


class DegenerateHistogram(MosaicError):
    """The image is constant; no threshold separates two classes."""


class EmptyMask(MosaicError):
    pass


class SingularConfiguration(MosaicError):
    """Five points do not determine a unique conic (e.g. collinear)."""


class NotAnEllipse(MosaicError):
    pass


class InsufficientEdges(MosaicError):
    pass


class ImplausibleRoi(MosaicError):
    """The fitted ellipse does not agree with the segmented foreground."""


class EmptyValidRegion(MosaicError):
    pass


class NoUsableFrames(MosaicError):
    pass


class InsufficientOverlap(MosaicError):
    pass


class ZeroVariance(MosaicError):
    pass


class NoValidHypothesis(MosaicError):
    pass


class EmptyOverlap(MosaicError):
    pass


class InvalidConfig(MosaicError, ValueError):
    pass
