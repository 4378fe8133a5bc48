"""Exception types shared across the toolkit.

Batch-facing entry points (matcher.match, the benchmark harness) catch
these and fold them into status codes; everything else raises.
"""


class FovMatchError(Exception):
    """Base class for all toolkit errors."""


class OutOfBounds(FovMatchError):
    """A crop or region leaves the host image."""


class SingularTransform(FovMatchError):
    """Affine transform is not invertible (|det| below threshold)."""


class InvalidRank(FovMatchError):
    """Requested component count is outside the valid range."""


class DimensionMismatch(FovMatchError):
    """Vector or matrix dimensions do not agree."""


class ReferenceTooSmall(FovMatchError):
    """Reference image cannot hold a single tile."""


class EmptyDictionary(FovMatchError):
    """Target dictionary contains no tiles."""


class NoValidPixels(FovMatchError):
    """No jointly valid pixels available for histogram estimation."""


class DegenerateIntensity(FovMatchError):
    """An image has a collapsed intensity range (constant image)."""


class DivergedError(FovMatchError):
    """Registration failed to find an ascent step repeatedly."""


class NotMatched(FovMatchError):
    """Match result carries no usable transform."""


class TooFewImages(FovMatchError):
    """Mosaicking needs at least two images."""


class DisconnectedGraph(FovMatchError):
    """Overlap graph does not reach every image from the anchor."""

    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__(f"unreachable images: {self.unreachable}")


class LengthMismatch(FovMatchError):
    """Point lists have different lengths."""
