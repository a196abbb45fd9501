"""3D box geometry in the KITTI camera frame.

Boxes are bottom-anchored: ``(x, y, z)`` is the center of the bottom face, the
top face sits at ``y - h`` (y points down). Length runs along the box x-axis
and width along the box z-axis, both rotated by ``ry`` about the y-axis. The
bird's-eye view (BEV) is the x-z plane with the camera at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .camera import ImageShape, Intrinsics

VISIBILITY_EPS = 1e-9
NEAR_PLANE = 0.1

# local (x, z) signs of the BEV corners, counter-clockwise in the x-z plane
CORNER_SIGNS = ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))


class VisibilityError(ValueError):
    """The camera sees zero or more than two vertical faces (it is inside the footprint)."""


class ProjectionError(ValueError):
    pass


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]; values already in range are returned untouched."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float  # noqa: E741
    ry: float = 0.0

    def __post_init__(self):
        if not (self.h > 0 and self.w > 0 and self.l > 0):
            raise ValueError(f"box dimensions must be positive: h={self.h}, w={self.w}, l={self.l}")
        object.__setattr__(self, "ry", normalize_angle(self.ry))

    @property
    def location(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.h, self.w, self.l)

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    def local_to_bev(self, xl, zl):
        """Box-local BEV offsets to camera-frame (x, z)."""
        c, s = math.cos(self.ry), math.sin(self.ry)
        return self.x + c * xl + s * zl, self.z - s * xl + c * zl


@dataclass(frozen=True)
class Label:
    cls: str
    box: Box3D | None
    bbox2d: tuple[float, float, float, float] | None = None
    truncated: float = 0.0
    occluded: int = 0
    alpha: float = -10.0
    score: float | None = None
    # original (x1, y1, x2, y2, h, w, l, x, y, z, ry) when box or bbox2d is a placeholder
    raw_geometry: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.bbox2d is not None:
            x1, y1, x2, y2 = self.bbox2d
            if not (x1 < x2 and y1 < y2):
                raise ValueError(f"degenerate 2D box {self.bbox2d}")


@dataclass(frozen=True)
class OneFace:
    edge: int


@dataclass(frozen=True)
class TwoFaces:
    corner: int


Visibility = OneFace | TwoFaces


def corners(box: Box3D) -> np.ndarray:
    """``(8, 3)`` corners: bottom face (y = box.y) then top face, each in BEV order."""
    out = np.empty((8, 3))
    for i, (sx, sz) in enumerate(CORNER_SIGNS):
        x, z = box.local_to_bev(sx * box.l / 2.0, sz * box.w / 2.0)
        out[i] = (x, box.y, z)
        out[i + 4] = (x, box.y - box.h, z)
    return out


def bev_rect(box: Box3D) -> np.ndarray:
    """``(4, 2)`` footprint as (x, z) points, counter-clockwise in the x-z plane."""
    return corners(box)[:4, [0, 2]]


def visible_faces(box: Box3D, eps: float = VISIBILITY_EPS) -> Visibility:
    rect = bev_rect(box)
    visible = []
    for i in range(4):
        a, b = rect[i], rect[(i + 1) % 4]
        d = b - a
        n = np.array([d[1], -d[0]]) / math.hypot(d[0], d[1])  # outward for a CCW polygon
        mid = (a + b) / 2.0
        if float(np.dot(n, -mid)) > eps:
            visible.append(i)
    if len(visible) == 1:
        return OneFace(visible[0])
    if len(visible) == 2:
        i, j = visible
        # adjacent edges i, i+1 share corner i+1; the pair (0, 3) shares corner 0
        return TwoFaces(j if j == i + 1 else i)
    raise VisibilityError(f"{len(visible)} visible faces; camera inside or on the footprint")


def projected_hull(K: Intrinsics, box: Box3D) -> tuple[float, float, float, float]:
    """Unclipped axis-aligned hull of the projected corners."""
    pts = corners(box)
    if np.any(pts[:, 2] <= NEAR_PLANE):
        raise ProjectionError(f"box corner closer than the {NEAR_PLANE} m near plane")
    u = K.fx * pts[:, 0] / pts[:, 2] + K.px
    v = K.fy * pts[:, 1] / pts[:, 2] + K.py
    return float(u.min()), float(v.min()), float(u.max()), float(v.max())


def clip_bbox(bbox, shape: ImageShape) -> tuple[tuple[float, float, float, float], bool]:
    x1, y1, x2, y2 = bbox
    cx1, cy1 = max(x1, 0.0), max(y1, 0.0)
    cx2, cy2 = min(x2, shape.width - 1.0), min(y2, shape.height - 1.0)
    if not (cx1 < cx2 and cy1 < cy2):
        raise ProjectionError("projected box lies outside the image")
    inside = (cx1, cy1, cx2, cy2) == (x1, y1, x2, y2)
    return (cx1, cy1, cx2, cy2), inside


def project_box(K: Intrinsics, box: Box3D, shape: ImageShape):
    """Image-clipped 2D box of a 3D box and whether it was fully inside the image."""
    return clip_bbox(projected_hull(K, box), shape)


# -- convex polygon clipping -------------------------------------------------


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject, clipper) -> list[tuple[float, float]]:
    """Sutherland-Hodgman: ``subject`` clipped by the convex CCW polygon ``clipper``."""
    out = [tuple(map(float, p)) for p in subject]
    clip = [tuple(map(float, p)) for p in clipper]
    for k in range(len(clip)):
        if not out:
            break
        (ax, ay), (bx, by) = clip[k], clip[(k + 1) % len(clip)]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, sp = cur, sc
    return out


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    return polygon_area(clip_convex(bev_rect(a), bev_rect(b)))


def bev_iou(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    union = a.l * a.w + b.l * b.w - inter
    return min(1.0, max(0.0, inter / union))


def iou3d(a: Box3D, b: Box3D) -> float:
    overlap = min(a.y, b.y) - max(a.y - a.h, b.y - b.h)
    if overlap <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * overlap
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


# -- matching and the size-bias analysis ---------------------------------------


def _box_of(obj) -> Box3D:
    return obj.box if isinstance(obj, Label) else obj


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    unmatched_preds: list[int]
    unmatched_gts: list[int]


def match_max_iou3d(preds: Sequence, gts: Sequence, min_iou: float = 0.0) -> MatchResult:
    """Greedy one-to-one matching by descending 3D IoU.

    Ties go to the lower prediction index, then the lower ground-truth index.
    Pairs below ``min_iou`` (or with zero overlap) are never matched.
    """
    cands = []
    for i, p in enumerate(preds):
        pb = _box_of(p)
        if pb is None:
            continue
        for j, g in enumerate(gts):
            gb = _box_of(g)
            if gb is None:
                continue
            iou = iou3d(pb, gb)
            if iou > 0 and iou >= min_iou:
                cands.append((-iou, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg))
    return MatchResult(
        pairs,
        [i for i in range(len(preds)) if i not in used_p],
        [j for j in range(len(gts)) if j not in used_g],
    )


def replace_dims(pred: Box3D, gt: Box3D, which: Iterable[str]) -> Box3D:
    """Copy the selected dimensions (``"h"``, ``"w"``, ``"l"``) from ``gt``; pose stays."""
    which = set(which)
    bad = which - {"h", "w", "l"}
    if bad:
        raise ValueError(f"unknown dimensions {sorted(bad)}")
    return replace(pred, **{k: getattr(gt, k) for k in which})


DEFAULT_STEPS: tuple[tuple[str, ...], ...] = ((), ("h",), ("h", "w"), ("h", "w", "l"))


@dataclass
class ReplacementStep:
    dims: tuple[str, ...]
    mean_iou3d: float
    mean_bev_iou: float


def dimension_replacement_analysis(preds, gts, steps=DEFAULT_STEPS, min_iou: float = 0.0):
    """Match predictions to ground truth once, then swap in ground-truth sizes step by step.

    Returns the match and one :class:`ReplacementStep` per entry of ``steps``
    with IoUs averaged over the matched pairs (NaN when nothing matched).
    """
    match = match_max_iou3d(preds, gts, min_iou)
    results = []
    for dims in steps:
        ious, bevs = [], []
        for i, j, _ in match.pairs:
            b = replace_dims(_box_of(preds[i]), _box_of(gts[j]), dims)
            ious.append(iou3d(b, _box_of(gts[j])))
            bevs.append(bev_iou(b, _box_of(gts[j])))
        mean = float(np.mean(ious)) if ious else float("nan")
        mbev = float(np.mean(bevs)) if bevs else float("nan")
        results.append(ReplacementStep(tuple(dims), mean, mbev))
    return match, results

