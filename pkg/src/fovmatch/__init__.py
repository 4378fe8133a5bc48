"""Small-FOV template matching toolkit.

Locates a small, possibly degraded template inside a much larger
reference image: a precomputed PCA dictionary over overlapping reference
tiles gives a coarse position, mutual-information registration refines
it to an affine transform. A companion mosaicker stitches unordered
overlapping frames via low-dimensional neighbor discovery.
"""

from .errors import (
    DegenerateIntensity,
    DimensionMismatch,
    DisconnectedGraph,
    DivergedError,
    EmptyDictionary,
    FovMatchError,
    InvalidRank,
    LengthMismatch,
    NoValidPixels,
    NotMatched,
    OutOfBounds,
    ReferenceTooSmall,
    SingularTransform,
    TooFewImages,
)
from .image import AffineTransform, CropBox, RasterImage, crop, load_image, resample, save_image, to_vector, warp_affine
from .mi import (
    JointHistogram,
    RegistrationResult,
    RegistrationSettings,
    joint_histogram,
    mi_objective,
    mutual_information,
    normalized_mutual_information,
    register,
)
from .pca import PcaModel, fit_exact, fit_randomized

__version__ = "0.1.0"
