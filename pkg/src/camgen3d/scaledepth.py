"""Multi-scale resampling, pixel-size depth and the MS/PIT commutation check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import ImageShape, Intrinsics, pixel_size, scale_intrinsics
from .imagecore import ImageBuffer, InverseMap, warp
from .pit import WeightMap, pit_forward_point, pit_inverse_point

DEFAULT_DEPTH_CONSTANT = 2.0e-3


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ScaledSample:
    image: ImageBuffer
    K: Intrinsics
    r_x: float
    r_y: float


def rescale_sample(img: ImageBuffer, K: Intrinsics, r_x: float, r_y: float) -> ScaledSample:
    """Resize an image and its intrinsics together.

    The intrinsics use the exact ratios; the raster dimensions are rounded half
    up, so pixel ``x`` of the source lands at ``r_x * x`` in the result.
    """
    K2 = scale_intrinsics(K, r_x, r_y)
    w = round_half_up(img.width * r_x)
    h = round_half_up(img.height * r_y)
    if w < 1 or h < 1:
        raise ValueError(f"rescaling {img.width}x{img.height} by ({r_x}, {r_y}) gives an empty image")
    if r_x == 1 and r_y == 1:
        return ScaledSample(img, K2, r_x, r_y)
    out = warp(img, InverseMap(lambda u, v: (u / r_x, v / r_y), w, h))
    return ScaledSample(out, K2, r_x, r_y)


@dataclass(frozen=True)
class DepthCodec:
    """Pixel-size depth ``d_p = (s / c) * d_g`` with ``s`` the camera pixel size."""

    c: float = DEFAULT_DEPTH_CONSTANT

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"depth constant must be positive, got {self.c}")


def _check_positive(d, what):
    if np.any(np.asarray(d) <= 0):
        raise ValueError(f"{what} must be positive")


def encode_depth(codec: DepthCodec, d_g, K: Intrinsics):
    _check_positive(d_g, "metric depth")
    return pixel_size(K) / codec.c * d_g


def decode_depth(codec: DepthCodec, d_p, K: Intrinsics):
    _check_positive(d_p, "pixel-size depth")
    return d_p * codec.c / pixel_size(K)


def decode_depth_varying(codec: DepthCodec, d_p: float, weight: WeightMap, u: int, v: int) -> float:
    """Decode with the spatially varying pixel size of a PIT image at output pixel ``(u, v)``."""
    _check_positive(d_p, "pixel-size depth")
    return d_p * codec.c / weight.at(u, v)


def commutation_residuals(K: Intrinsics, r_x: float, r_y: float, points) -> np.ndarray:
    """Residuals between the two orders of multi-scale (MS) and PIT.

    ``points`` are ``(N, 2)`` source pixel coordinates. Returns ``(N, 4)`` with
    ``|u1 - u2|, |v1 - v2|, |x1 - x2|, |y1 - y2|`` where index 1 is MS then
    PIT and index 2 is PIT then MS followed by the inverse PIT under the
    scaled intrinsics.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    X = pts[:, 0] - K.px
    Y = pts[:, 1] - K.py
    K2 = scale_intrinsics(K, r_x, r_y)

    # MS first: relative coordinates scale with the principal point
    x1, y1 = r_x * X, r_y * Y
    u1, v1 = pit_forward_point(K2, x1, y1)

    # PIT first, then MS on the spherical image
    u, v = pit_forward_point(K, X, Y)
    u2, v2 = r_x * u, r_y * v
    x2, y2 = pit_inverse_point(K2, u2, v2)

    return np.abs(np.stack([u1 - u2, v1 - v2, x1 - x2, y1 - y2], axis=1))


def check_ms_pit_commutation(K: Intrinsics, shape: ImageShape, r, points=None) -> float:
    """Max residual of MS/PIT commutation; zero up to rounding when the orders commute.

    ``r`` is a scalar or an ``(r_x, r_y)`` pair. Without ``points`` a 17x17 grid
    spanning the image rectangle is used.
    """
    r_x, r_y = (r, r) if np.isscalar(r) else r
    if points is None:
        gx, gy = np.meshgrid(np.linspace(0, shape.width, 17), np.linspace(0, shape.height, 17))
        points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    res = commutation_residuals(K, r_x, r_y, points)
    return float(res.max()) if res.size else 0.0
