"""Camera-generalized preprocessing and geometry-consistent object scaling for Mono3D data."""

from .camera import Fov, ImageShape, Intrinsics, fov, pixel_size, scale_intrinsics
from .geom3d import Box3D, Label
from .imagecore import ImageBuffer, load_image, save_image

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "Fov",
    "ImageBuffer",
    "ImageShape",
    "Intrinsics",
    "Label",
    "fov",
    "load_image",
    "pixel_size",
    "save_image",
    "scale_intrinsics",
]
