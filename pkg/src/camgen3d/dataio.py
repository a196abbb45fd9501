"""KITTI label/calibration text formats and per-class size statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .camera import ImageShape, Intrinsics
from .geom3d import Box3D, Label


class LabelParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CalibError(ValueError):
    pass


class EmptyStatsError(ValueError):
    pass


_FIELDS = "type trunc occl alpha x1 y1 x2 y2 h w l x y z ry".split()


def _parse_float(tok: str, line_no: int, name: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise LabelParseError(line_no, f"field {name!r} is not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise LabelParseError(line_no, f"field {name!r} is not finite: {tok!r}")
    return v


def parse_label_line(line: str, line_no: int = 1) -> Label:
    toks = line.split()
    if len(toks) not in (15, 16):
        raise LabelParseError(line_no, f"expected 15 or 16 fields, got {len(toks)}")
    cls = toks[0]
    vals = [_parse_float(t, line_no, n) for t, n in zip(toks[1:15], _FIELDS[1:])]
    trunc, occl, alpha = vals[0], vals[1], vals[2]
    if occl != int(occl):
        raise LabelParseError(line_no, f"occlusion must be an integer, got {toks[2]!r}")
    x1, y1, x2, y2 = vals[3:7]
    h, w, l, x, y, z, ry = vals[7:14]
    score = _parse_float(toks[15], line_no, "score") if len(toks) == 16 else None
    bbox = (x1, y1, x2, y2) if (x1 < x2 and y1 < y2) else None
    # DontCare and friends carry placeholder geometry
    box = Box3D(x, y, z, h, w, l, ry) if (h > 0 and w > 0 and l > 0) else None
    raw = tuple(vals[3:14]) if (bbox is None or box is None) else None
    return Label(cls, box, bbox, trunc, int(occl), alpha, score, raw)


def parse_label_file(text: str) -> list[Label]:
    labels = []
    for no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            labels.append(parse_label_line(line, no))
    return labels


def format_label(label: Label, precision: int = 2) -> str:
    f = f"{{:.{precision}f}}"
    raw = label.raw_geometry
    if label.bbox2d is not None:
        geo2 = label.bbox2d
    elif raw is not None:
        geo2 = raw[:4]
    else:
        geo2 = (0.0, 0.0, 0.0, 0.0)
    if label.box is not None:
        b = label.box
        geo3 = (b.h, b.w, b.l, b.x, b.y, b.z, b.ry)
    elif raw is not None:
        geo3 = raw[4:]
    else:
        geo3 = (-1.0, -1.0, -1.0, -1000.0, -1000.0, -1000.0, -10.0)
    parts = [label.cls, f.format(label.truncated), str(int(label.occluded)), f.format(label.alpha)]
    parts += [f.format(v) for v in geo2]
    parts += [f.format(v) for v in geo3]
    if label.score is not None:
        parts.append(f.format(label.score))
    return " ".join(parts)


def serialize_label_file(labels: Iterable[Label], precision: int = 2) -> str:
    return "".join(format_label(lab, precision) + "\n" for lab in labels)


def parse_calib_matrices(text: str) -> dict[str, np.ndarray]:
    mats = {}
    for no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if ":" not in line:
            raise CalibError(f"line {no}: expected 'KEY: values'")
        key, _, rest = line.partition(":")
        vals = []
        for pos, tok in enumerate(rest.split(), start=1):
            try:
                vals.append(float(tok))
            except ValueError:
                raise CalibError(f"line {no} ({key.strip()}), token {pos}: not a number: {tok!r}") from None
        mats[key.strip()] = np.array(vals)
    return mats


def parse_calib(text: str, key: str = "P2") -> Intrinsics:
    mats = parse_calib_matrices(text)
    if key not in mats:
        raise CalibError(f"missing {key} projection matrix")
    P = mats[key]
    if P.size != 12:
        raise CalibError(f"{key} has {P.size} values, expected 12")
    P = P.reshape(3, 4)
    return Intrinsics(float(P[0, 0]), float(P[1, 1]), float(P[0, 2]), float(P[1, 2]))


def rescale_calib_text(text: str, r_x: float, r_y: float) -> str:
    """Scale the first two rows of every ``P*`` projection matrix; other lines are kept."""
    out = []
    for line in text.splitlines():
        key, sep, rest = line.partition(":")
        if sep and key.strip().startswith("P") and len(rest.split()) == 12:
            P = np.array([float(t) for t in rest.split()]).reshape(3, 4)
            P[0] *= r_x
            P[1] *= r_y
            line = f"{key}: " + " ".join(f"{v:.12e}" for v in P.ravel())
        out.append(line)
    return "\n".join(out) + "\n"


def format_calib(K: Intrinsics, key: str = "P2") -> str:
    P = [K.fx, 0.0, K.px, 0.0, 0.0, K.fy, K.py, 0.0, 0.0, 0.0, 1.0, 0.0]
    return f"{key}: " + " ".join(f"{v:.12e}" for v in P) + "\n"


@dataclass(frozen=True)
class SizeStats:
    cls: str
    count: int
    mean_h: float
    mean_w: float
    mean_l: float

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("statistics need at least one object")
        if min(self.mean_h, self.mean_w, self.mean_l) <= 0:
            raise ValueError("mean sizes must be positive")

    def to_json(self) -> dict:
        return {"class": self.cls, "count": self.count, "mean_h": self.mean_h, "mean_w": self.mean_w, "mean_l": self.mean_l}

    @classmethod
    def from_json(cls, d: dict) -> "SizeStats":
        return cls(d["class"], int(d["count"]), float(d["mean_h"]), float(d["mean_w"]), float(d["mean_l"]))


def size_stats(labels: Iterable[Iterable[Label]], cls: str) -> SizeStats:
    """Mean (h, w, l) over all objects of class ``cls`` across the given label files."""
    dims = [lab.box.dims for frame in labels for lab in frame if lab.cls == cls and lab.box is not None]
    if not dims:
        raise EmptyStatsError(f"no objects of class {cls!r}")
    h, w, l = np.mean(np.array(dims), axis=0)
    return SizeStats(cls, len(dims), float(h), float(w), float(l))


@dataclass(frozen=True)
class DatasetInfo:
    """One row of the dataset overview: image shape, FOV and mean car size."""

    name: str
    shape: ImageShape
    fov_h_deg: float
    fov_w_deg: float
    mean_h: float
    mean_w: float
    mean_l: float

    @property
    def stats(self) -> SizeStats:
        return SizeStats("Car", 1, self.mean_h, self.mean_w, self.mean_l)


# Dataset overview for front cameras (mean car sizes in meters).
DATASETS = {
    "kitti": DatasetInfo("KITTI", ImageShape(1242, 375), 29.0, 81.0, 1.52, 1.63, 3.87),
    "nuscenes": DatasetInfo("NuScenes", ImageShape(1600, 900), 39.0, 65.0, 1.71, 1.92, 4.62),
    "lyft": DatasetInfo("Lyft", ImageShape(1224, 1024), 60.0, 70.0, 1.73, 1.94, 4.77),
}
