"""Pinhole intrinsics, field of view, intrinsic rescaling and projection.

Camera frame follows KITTI: x right, y down, z forward. All angles are in
radians; degrees appear only at report boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.px, self.py)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"intrinsics must be finite: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    @classmethod
    def centered(cls, f: float, width: int, height: int, fy: float | None = None) -> "Intrinsics":
        """Intrinsics with the principal point at the image center."""
        return cls(f, f if fy is None else fy, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class ImageShape:
    """Raster size in pixels; real-valued sizes are accepted for exact FOV algebra."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image shape must be at least 1x1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class Fov:
    fov_w: float
    fov_h: float

    def degrees(self) -> tuple[float, float]:
        return math.degrees(self.fov_w), math.degrees(self.fov_h)


def fov(K: Intrinsics, shape: ImageShape) -> Fov:
    return Fov(
        2.0 * math.atan(shape.width / (2.0 * K.fx)),
        2.0 * math.atan(shape.height / (2.0 * K.fy)),
    )


def focal_from_fov(extent: float, fov_angle: float) -> float:
    """Focal length (px) that gives ``fov_angle`` (rad) over ``extent`` pixels."""
    return extent / (2.0 * math.tan(fov_angle / 2.0))


def scale_intrinsics(K: Intrinsics, r_x: float, r_y: float) -> Intrinsics:
    """Resize-rate update of the intrinsics: focal length and principal point scale per axis."""
    if not (r_x > 0 and r_y > 0):
        raise ValueError(f"resize rates must be positive, got ({r_x}, {r_y})")
    return Intrinsics(K.fx * r_x, K.fy * r_y, K.px * r_x, K.py * r_y)


def pixel_size(K: Intrinsics) -> float:
    return math.sqrt(1.0 / K.fx**2 + 1.0 / K.fy**2)


def project(K: Intrinsics, point) -> np.ndarray:
    """Project camera-frame point(s) ``(..., 3)`` to pixels ``(..., 2)``."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane (z <= 0)")
    u = K.fx * p[..., 0] / z + K.px
    v = K.fy * p[..., 1] / z + K.py
    return np.stack([u, v], axis=-1)


def backproject(K: Intrinsics, point2, depth) -> np.ndarray:
    uv = np.asarray(point2, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise BehindCameraError("depth must be positive")
    x = (uv[..., 0] - K.px) / K.fx * d
    y = (uv[..., 1] - K.py) / K.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)
