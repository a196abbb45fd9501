"""Float image buffers, bilinear sampling, inverse-map warping and PNG I/O.

Pixel convention: integer coordinates address pixel centers, so ``(x, y) =
(3, 5)`` is the stored sample at column 3, row 5. Images are held as
``(height, width, channels)`` float64 arrays with samples in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image


class ImageDecodeError(ValueError):
    """Raised when a file cannot be decoded as an 8-bit PNG."""


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) samples, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def filled(cls, width: int, height: int, value=0.0, channels: int = 3) -> "ImageBuffer":
        return cls(np.full((height, width, channels), value, dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ImageBuffer(width={self.width}, height={self.height}, channels={self.channels})"


@dataclass(frozen=True)
class InverseMap:
    """Maps output pixel grids ``(u, v)`` to continuous source coordinates ``(x, y)``.

    ``fn`` is called once with two broadcastable float arrays and must return a
    pair of arrays of the same shape.
    """

    fn: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"output shape must be positive, got {self.width}x{self.height}")


def _bilinear(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Edge-clamped bilinear lookup; returns ``x.shape + (channels,)``."""
    h, w = data.shape[:2]
    x = np.clip(x, 0.0, w - 1)
    y = np.clip(y, 0.0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    a = data[y0, x0]
    b = data[y0, x1]
    c = data[y1, x0]
    d = data[y1, x1]
    # difference form keeps constant regions and integer coordinates bit-exact
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return top + fy * (bottom - top)


def sample_bilinear(img: ImageBuffer, x, y) -> np.ndarray:
    """Sample ``img`` at continuous ``(x, y)``; coordinates are clamped to the grid.

    Scalar coordinates return a ``(channels,)`` vector, array coordinates
    return ``shape + (channels,)``.
    """
    return _bilinear(img.data, np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))


def outside_mask(x: np.ndarray, y: np.ndarray, width: int, height: int) -> np.ndarray:
    """True where a source coordinate lies one pixel or more outside the sample grid."""
    return (x <= -1.0) | (x >= width) | (y <= -1.0) | (y >= height)


def warp(img: ImageBuffer, inverse_map: InverseMap, fill: float = 0.0) -> ImageBuffer:
    v, u = np.mgrid[0 : inverse_map.height, 0 : inverse_map.width].astype(np.float64)
    x, y = inverse_map.fn(u, v)
    x = np.broadcast_to(np.asarray(x, dtype=np.float64), u.shape)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), u.shape)
    bad = outside_mask(x, y, img.width, img.height) | ~np.isfinite(x) | ~np.isfinite(y)
    out = _bilinear(img.data, np.where(bad, 0.0, x), np.where(bad, 0.0, y))
    out[bad] = fill
    return ImageBuffer(out)


def identity_map(width: int, height: int) -> InverseMap:
    return InverseMap(lambda u, v: (u, v), width, height)


def load_image(path) -> ImageBuffer:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "RGB"):
                pass
            elif mode == "RGBA":
                im = im.convert("RGB")
            elif mode == "LA":
                im = im.convert("L")
            elif mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB").convert("RGB")
            else:
                raise ImageDecodeError(f"{path}: unsupported PNG mode {mode!r} (only 8-bit L/RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageDecodeError:
        raise
    except OSError as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def to_uint8(img: ImageBuffer) -> np.ndarray:
    # floor(v*255 + 0.5) is round-half-up; np.round would round half to even
    q = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return q[:, :, 0] if img.channels == 1 else q


def save_image(img: ImageBuffer, path) -> None:
    arr = to_uint8(img)
    Image.fromarray(arr).save(Path(path), format="PNG")
