"""Position-invariant transform (PIT): arctan reprojection of the image plane.

A source pixel ``x`` is measured from the principal point, ``X = x - p_x``,
and mapped to ``U = f_x * atan(X / f_x)`` (likewise for rows). The output
canvas covers the exact image of the source rectangle ``[0, w] x [0, h]``;
output pixel ``u`` sits at ``U = u + du``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import ImageShape, Intrinsics
from .imagecore import ImageBuffer, InverseMap, save_image, warp

# slack so that an extent of e.g. 1242 - 1e-13 does not round up to 1243
_CEIL_SLACK = 1e-9


class PitDomainError(ValueError):
    """Raised when an inverse map would cross the tangent singularity."""


def pit_forward_point(K: Intrinsics, X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return K.fx * np.arctan(X / K.fx), K.fy * np.arctan(Y / K.fy)


def pit_inverse_point(K: Intrinsics, U, V):
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if np.any(np.abs(U) >= K.fx * math.pi / 2) or np.any(np.abs(V) >= K.fy * math.pi / 2):
        raise PitDomainError("PIT coordinate at or beyond f*pi/2 has no plane preimage")
    return K.fx * np.tan(U / K.fx), K.fy * np.tan(V / K.fy)


@dataclass(frozen=True)
class PitFrame:
    K: Intrinsics
    source: ImageShape
    output: ImageShape
    du: float
    dv: float

    def to_output(self, x, y):
        """Source pixel coordinates -> PIT output pixel coordinates."""
        U, V = pit_forward_point(self.K, np.asarray(x) - self.K.px, np.asarray(y) - self.K.py)
        return U - self.du, V - self.dv

    def to_source(self, u, v):
        """PIT output pixel coordinates -> source pixel coordinates."""
        X, Y = pit_inverse_point(self.K, np.asarray(u) + self.du, np.asarray(v) + self.dv)
        return X + self.K.px, Y + self.K.py

    def to_json(self) -> dict:
        return {
            "K": {"fx": self.K.fx, "fy": self.K.fy, "px": self.K.px, "py": self.K.py},
            "source": [self.source.width, self.source.height],
            "output": [self.output.width, self.output.height],
            "offset": [self.du, self.dv],
        }

    @classmethod
    def from_json(cls, d: dict) -> "PitFrame":
        return cls(
            Intrinsics(**d["K"]),
            ImageShape(*d["source"]),
            ImageShape(*d["output"]),
            float(d["offset"][0]),
            float(d["offset"][1]),
        )


def make_pit_frame(K: Intrinsics, shape: ImageShape) -> PitFrame:
    xs = np.array([0.0, shape.width]) - K.px
    ys = np.array([0.0, shape.height]) - K.py
    U, V = pit_forward_point(K, xs, ys)
    out_w = max(1, math.ceil(U[1] - U[0] - _CEIL_SLACK))
    out_h = max(1, math.ceil(V[1] - V[0] - _CEIL_SLACK))
    return PitFrame(K, shape, ImageShape(out_w, out_h), float(U[0]), float(V[0]))


def _check_shape(img: ImageBuffer, shape: ImageShape, what: str):
    if (img.width, img.height) != (shape.width, shape.height):
        raise ValueError(
            f"{what} image is {img.width}x{img.height}, frame expects {shape.width}x{shape.height}"
        )


def pit_warp_image(frame: PitFrame, img: ImageBuffer) -> ImageBuffer:
    _check_shape(img, frame.source, "source")
    return warp(img, InverseMap(frame.to_source, frame.output.width, frame.output.height))


def pit_unwarp_image(frame: PitFrame, img: ImageBuffer) -> ImageBuffer:
    """Inverse PIT: resample a PIT-domain image back onto the plain source grid."""
    _check_shape(img, frame.output, "PIT")
    return warp(img, InverseMap(frame.to_output, frame.source.width, frame.source.height))


def point_weight(K: Intrinsics, U, V):
    """Side lengths ``(w_x, w_y)`` of the PIT pixel starting at ``(U, V)`` and its size ``s``."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    X0, Y0 = pit_inverse_point(K, U, V)
    X1, Y1 = pit_inverse_point(K, U + 1.0, V + 1.0)
    w_x = X1 - X0
    w_y = Y1 - Y0
    s = np.sqrt((w_x / K.fx) ** 2 + (w_y / K.fy) ** 2)
    return w_x, w_y, s


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Per-output-pixel pixel size ``s`` of a PIT image, with side lengths."""

    frame: PitFrame
    s: np.ndarray
    w_x: np.ndarray
    w_y: np.ndarray

    @property
    def width(self) -> int:
        return self.s.shape[1]

    @property
    def height(self) -> int:
        return self.s.shape[0]

    def at(self, u: int, v: int) -> float:
        if not (0 <= u < self.width and 0 <= v < self.height):
            raise ValueError(f"pixel ({u}, {v}) outside {self.width}x{self.height} weight map")
        return float(self.s[v, u])


def pixel_size_map(frame: PitFrame) -> WeightMap:
    W, H = frame.output.width, frame.output.height
    U = np.arange(W, dtype=np.float64) + frame.du
    V = np.arange(H, dtype=np.float64) + frame.dv
    w_x, _, _ = point_weight(frame.K, U, np.zeros_like(U))
    _, w_y, _ = point_weight(frame.K, np.zeros_like(V), V)
    # separable: w_x depends on the column only, w_y on the row only
    wx = np.broadcast_to(w_x[None, :], (H, W))
    wy = np.broadcast_to(w_y[:, None], (H, W))
    s = np.sqrt((wx / frame.K.fx) ** 2 + (wy / frame.K.fy) ** 2)
    for a in (s, wx, wy):
        a.setflags(write=False)
    return WeightMap(frame, s, wx, wy)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_weight_map_png(wm: WeightMap, path) -> None:
    """8-bit grayscale PNG of ``s / max(s)`` plus a ``<name>.json`` sidecar with the scale."""
    path = Path(path)
    smax = float(wm.s.max())
    save_image(ImageBuffer(wm.s / smax), path)
    header = {
        "width": wm.width,
        "height": wm.height,
        "min": float(wm.s.min()),
        "max": smax,
        "encoding": "png8: value = sample / 255 * max",
    }
    _sidecar(path).write_text(json.dumps(header, indent=2) + "\n")


def save_weight_map_raw(wm: WeightMap, path) -> None:
    """Raw little-endian float32 row-major samples plus a ``<name>.json`` header."""
    path = Path(path)
    path.write_bytes(wm.s.astype("<f4").tobytes())
    header = {
        "width": wm.width,
        "height": wm.height,
        "min": float(wm.s.min()),
        "max": float(wm.s.max()),
        "dtype": "float32-le",
    }
    _sidecar(path).write_text(json.dumps(header, indent=2) + "\n")


def load_weight_map_raw(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(_sidecar(path).read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    return data.reshape(header["height"], header["width"]).astype(np.float64)
