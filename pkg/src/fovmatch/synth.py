"""Synthetic fundus-like test images.

Generates a shaded disk with a branching network of dark curved vessels
plus a bright disc blob and a smooth random intensity field, so every
tile of the result carries usable texture. Purely procedural: the
benchmark suite can run with zero external data.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import RasterImage


def _quad_bezier(p0, p1, p2, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _stamp_disk(canvas: np.ndarray, cx: float, cy: float, radius: float, value: float):
    h, w = canvas.shape
    r = int(np.ceil(radius))
    x0, x1 = max(int(cx) - r, 0), min(int(cx) + r + 1, w)
    y0, y1 = max(int(cy) - r, 0), min(int(cy) + r + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    patch = canvas[y0:y1, x0:x1]
    np.minimum(patch, np.where(d2 <= radius * radius, value, patch), out=patch)


def generate_fundus(width: int, height: int = None, seed: int = 0) -> RasterImage:
    """Procedural retina-style image: shaded disk, vessels, optic blob."""
    height = height or width
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = width / 2.0, height / 2.0
    rad = 0.55 * max(width, height)

    # Mild radial shading over strong multi-scale random fields, so every
    # region of the result is distinctive (required for neighbor discovery).
    r2 = ((xs - cx) ** 2 + (ys - cy) ** 2) / rad ** 2
    base = 0.5 * (1.0 - 0.25 * np.clip(r2, 0.0, 1.5))

    def smooth_field(sigma, amp):
        f = gaussian_filter(rng.standard_normal((height, width)), sigma=sigma)
        s = f.std()
        return amp * f / s if s > 0 else 0.0

    base += smooth_field(max(width, height) / 6.0, 0.16)
    base += smooth_field(max(width, height) / 15.0, 0.07)
    base += smooth_field(3.0, 0.02)

    # Vessel layer: multiplicative darkening, stamped along quadratic curves.
    vessels = np.ones((height, width))
    disc = np.array([cx + rng.uniform(-0.25, 0.25) * width, cy + rng.uniform(-0.2, 0.2) * height])
    n_vessels = 14
    for _ in range(n_vessels):
        ang = rng.uniform(0, 2 * np.pi)
        reach = rng.uniform(0.5, 0.95) * rad
        p0 = disc + rng.normal(0, 4, size=2)
        p2 = disc + reach * np.array([np.cos(ang), np.sin(ang)])
        mid = (p0 + p2) / 2
        perp = np.array([-(p2 - p0)[1], (p2 - p0)[0]])
        p1 = mid + rng.uniform(-0.25, 0.25) * perp
        pts = _quad_bezier(p0, p1, p2, max(int(reach), 24))
        w0 = rng.uniform(2.5, 5.0)
        for i, (px, py) in enumerate(pts):
            frac = i / len(pts)
            _stamp_disk(vessels, px, py, w0 * (1.0 - 0.6 * frac), 0.62 + 0.2 * frac)
        # first-order branches
        for _ in range(rng.integers(1, 3)):
            k = rng.integers(len(pts) // 4, 3 * len(pts) // 4)
            b0 = pts[k]
            bang = ang + rng.uniform(-1.2, 1.2)
            b2 = b0 + rng.uniform(0.2, 0.45) * rad * np.array([np.cos(bang), np.sin(bang)])
            bpts = _quad_bezier(b0, (b0 + b2) / 2 + rng.normal(0, 8, 2), b2, 40)
            for j, (px, py) in enumerate(bpts):
                _stamp_disk(vessels, px, py, max(1.5, w0 * 0.5 * (1 - 0.5 * j / 40)), 0.7)

    vessels = gaussian_filter(vessels, sigma=0.8)
    img = base * vessels

    # Bright optic-disc-like blob.
    d2 = (xs - disc[0]) ** 2 + (ys - disc[1]) ** 2
    img += 0.25 * np.exp(-d2 / (2 * (0.04 * max(width, height)) ** 2))

    return RasterImage(np.clip(img, 0.0, 1.0))
