"""Pixel container, affine geometry, cropping, warping, and image I/O.

Intensities are double precision in [0, 1] everywhere; 8-bit inputs are
scaled by 1/255 and 16-bit by 1/65535 at ingestion. All value types are
immutable after construction, so they can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import OutOfBounds, SingularTransform

SINGULAR_EPS = 1e-12


@dataclass(frozen=True)
class RasterImage:
    """Single-channel intensity grid, row-major, values clamped to [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a 2d grid with positive dims, got shape {arr.shape}")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def constant(width: int, height: int, value: float = 0.0) -> RasterImage:
    return RasterImage(np.full((height, width), value))


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned box given by its center and size.

    The box spans pixel columns [left, left + width) with
    left = round(center_x - width / 2), and likewise for rows.
    """

    center_x: float
    center_y: float
    width: int
    height: int

    @property
    def left(self) -> int:
        return int(round(self.center_x - self.width / 2.0))

    @property
    def top(self) -> int:
        return int(round(self.center_y - self.height / 2.0))

    def inside(self, image: RasterImage) -> bool:
        return (
            self.left >= 0
            and self.top >= 0
            and self.left + self.width <= image.width
            and self.top + self.height <= image.height
        )


@dataclass(frozen=True)
class AffineTransform:
    """2D affine map p -> A p + t with A = [[a11, a12], [a21, a22]].

    Composes and inverts exactly as 3x3 homogeneous matrices whose last
    row is (0, 0, 1).
    """

    a11: float = 1.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls(tx=float(tx), ty=float(ty))

    @classmethod
    def rotation(cls, angle_rad: float, center: tuple[float, float] | None = None) -> "AffineTransform":
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        rot = cls(c, -s, s, c)
        if center is None:
            return rot
        cx, cy = center
        return cls.translation(cx, cy).compose(rot).compose(cls.translation(-cx, -cy))

    @classmethod
    def shear(cls, shear_x: float = 0.0, shear_y: float = 0.0) -> "AffineTransform":
        return cls(1.0, float(shear_x), float(shear_y), 1.0)

    @classmethod
    def from_params(cls, params) -> "AffineTransform":
        a11, a12, a21, a22, tx, ty = (float(v) for v in params)
        return cls(a11, a12, a21, a22, tx, ty)

    def as_params(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a21, self.a22, self.tx, self.ty])

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.a11, self.a12, self.tx],
                [self.a21, self.a22, self.ty],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return the map p -> self(other(p)), i.e. `other` applies first."""
        m = self.matrix @ other.matrix
        return AffineTransform(m[0, 0], m[0, 1], m[1, 0], m[1, 1], m[0, 2], m[1, 2])

    def invert(self) -> "AffineTransform":
        d = self.det
        if abs(d) < SINGULAR_EPS:
            raise SingularTransform(f"determinant {d:.3e} below {SINGULAR_EPS:.0e}")
        b11, b12 = self.a22 / d, -self.a12 / d
        b21, b22 = -self.a21 / d, self.a11 / d
        return AffineTransform(
            b11, b12, b21, b22,
            -(b11 * self.tx + b12 * self.ty),
            -(b21 * self.tx + b22 * self.ty),
        )

    def apply(self, points) -> np.ndarray:
        """Map an (n, 2) array of (x, y) points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack(
            (self.a11 * x + self.a12 * y + self.tx, self.a21 * x + self.a22 * y + self.ty)
        )


def crop(image: RasterImage, box: CropBox) -> RasterImage:
    """Extract the sub-image covered by `box`; the box must lie inside."""
    if not box.inside(image):
        raise OutOfBounds(
            f"box {box.width}x{box.height} at ({box.left},{box.top}) leaves "
            f"image {image.width}x{image.height}"
        )
    l, t = box.left, box.top
    return RasterImage(image.pixels[t : t + box.height, l : l + box.width])


def to_vector(image: RasterImage) -> np.ndarray:
    """Row-major flattening, length width*height."""
    return image.pixels.ravel().copy()


def sample_bilinear(pixels: np.ndarray, sx: np.ndarray, sy: np.ndarray):
    """Bilinear sample `pixels` at real coordinates (sx, sy).

    Returns (values, valid); points outside [0, w-1] x [0, h-1] get value 0
    and valid False.
    """
    h, w = pixels.shape
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    cx = np.clip(sx, 0, w - 1)
    cy = np.clip(sy, 0, h - 1)
    x0 = np.clip(np.floor(cx).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(cy).astype(np.intp), 0, max(h - 2, 0))
    dx = cx - x0
    dy = cy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = pixels[y0, x0]
    v01 = pixels[y0, x1]
    v10 = pixels[y1, x0]
    v11 = pixels[y1, x1]
    vals = (1 - dy) * ((1 - dx) * v00 + dx * v01) + dy * ((1 - dx) * v10 + dx * v11)
    return np.where(valid, vals, 0.0), valid


def sample_bilinear_grad(pixels: np.ndarray, sx: np.ndarray, sy: np.ndarray):
    """Spatial gradient of the bilinear interpolant at (sx, sy).

    Returns (gx, gy); zero outside the image. Piecewise constant per cell
    in each direction, which is the exact derivative of the interpolant.
    """
    h, w = pixels.shape
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    cx = np.clip(sx, 0, w - 1)
    cy = np.clip(sy, 0, h - 1)
    x0 = np.clip(np.floor(cx).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(cy).astype(np.intp), 0, max(h - 2, 0))
    dx = cx - x0
    dy = cy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = pixels[y0, x0]
    v01 = pixels[y0, x1]
    v10 = pixels[y1, x0]
    v11 = pixels[y1, x1]
    gx = (1 - dy) * (v01 - v00) + dy * (v11 - v10)
    gy = (1 - dx) * (v10 - v00) + dx * (v11 - v01)
    return np.where(valid, gx, 0.0), np.where(valid, gy, 0.0)


def warp_affine(
    image: RasterImage, u: AffineTransform, out_w: int, out_h: int
) -> tuple[RasterImage, np.ndarray]:
    """Resample `image` so that output pixel x takes the intensity at u(x).

    Samples falling outside the source are zero-filled; the boolean mask
    returned alongside marks pixels whose source sample was in bounds.
    """
    if abs(u.det) < SINGULAR_EPS:
        raise SingularTransform(f"determinant {u.det:.3e} below {SINGULAR_EPS:.0e}")
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    sx = u.a11 * xs + u.a12 * ys + u.tx
    sy = u.a21 * xs + u.a22 * ys + u.ty
    vals, valid = sample_bilinear(image.pixels, sx, sy)
    return RasterImage(vals), valid


def resample(image: RasterImage, out_w: int, out_h: int) -> RasterImage:
    """Bilinear resize mapping the corner pixels of the grids onto each other."""
    if (out_w, out_h) == (image.width, image.height):
        return image
    xs = np.linspace(0, image.width - 1, out_w) if out_w > 1 else np.array([(image.width - 1) / 2.0])
    ys = np.linspace(0, image.height - 1, out_h) if out_h > 1 else np.array([(image.height - 1) / 2.0])
    gx, gy = np.meshgrid(xs, ys)
    vals, _ = sample_bilinear(image.pixels, gx, gy)
    return RasterImage(vals)


def load_image(path, channel: str = "green") -> RasterImage:
    """Read a PNG or PGM file into a [0, 1] grid.

    Color inputs keep the green channel by default (`channel="luma"`
    switches to the Rec. 601 luminance combination).
    """
    with PILImage.open(path) as img:
        mode = img.mode
        arr = np.asarray(img)
    if mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64) / 255.0
        if channel == "luma":
            data = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        else:
            data = rgb[..., 1]
    elif mode == "L":
        data = arr.astype(np.float64) / 255.0
    elif mode in ("I", "I;16", "I;16B", "I;16L"):
        data = arr.astype(np.float64) / 65535.0
    elif mode == "F":
        data = arr.astype(np.float64)
    else:
        raise ValueError(f"unsupported image mode {mode!r} in {path}")
    return RasterImage(data)


def save_image(image: RasterImage, path) -> None:
    """Write an 8-bit PNG (round-to-nearest of 255*value)."""
    data = np.rint(image.pixels * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="L").save(path)
