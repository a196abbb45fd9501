"""2D-3D geometry-consistent object scaling (GCOS).

Each object is resized in 3D while the part of its footprint the camera sees
stays put: the visible edge's midpoint for one-face objects, the nearest
corner for two-face objects. The bottom stays on the ground. The image patch
is then cropped from the projection of the old box and resampled onto the
projection of the new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import ImageShape, Intrinsics
from .geom3d import (
    CORNER_SIGNS,
    Box3D,
    Label,
    OneFace,
    ProjectionError,
    TwoFaces,
    Visibility,
    VisibilityError,
    normalize_angle,
    project_box,
    projected_hull,
    visible_faces,
)
from .imagecore import ImageBuffer, sample_bilinear

RATIO_MIN, RATIO_MAX = 0.2, 5.0
DEFAULT_RANDOM_RANGE = (0.9, 1.1)
MIN_PATCH_AREA = 16.0
FEATHER_RADIUS = 2
BLEND_MODES = ("none", "feather")


class SkipObject(Exception):
    """An object GCOS leaves untouched; the message is the recorded reason."""


def _check_ratio(s):
    if not (RATIO_MIN <= s <= RATIO_MAX):
        raise ValueError(f"scale ratio {s} outside [{RATIO_MIN}, {RATIO_MAX}]")


@dataclass(frozen=True)
class ScaleSpec:
    """Per-dimension ratios ``(s_h, s_w, s_l)``.

    ``mode="stat"`` uses the fixed ``ratios``; ``mode="random"`` draws each
    dimension independently and uniformly from its entry in ``intervals``.
    """

    mode: str
    ratios: tuple[float, float, float] | None = None
    intervals: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.mode == "stat":
            if self.ratios is None or len(self.ratios) != 3:
                raise ValueError("stat mode needs three ratios (h, w, l)")
            for s in self.ratios:
                _check_ratio(s)
        elif self.mode == "random":
            if self.intervals is None or len(self.intervals) != 3:
                raise ValueError("random mode needs three (lo, hi) intervals")
            for lo, hi in self.intervals:
                _check_ratio(lo)
                _check_ratio(hi)
                if lo > hi:
                    raise ValueError(f"empty interval ({lo}, {hi})")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def stat(cls, s_h: float, s_w: float, s_l: float) -> "ScaleSpec":
        return cls("stat", ratios=(float(s_h), float(s_w), float(s_l)))

    @classmethod
    def random(cls, lo: float = DEFAULT_RANDOM_RANGE[0], hi: float = DEFAULT_RANDOM_RANGE[1]) -> "ScaleSpec":
        return cls("random", intervals=((lo, hi),) * 3)

    def draw(self, rng: np.random.Generator) -> tuple[float, float, float]:
        if self.mode == "stat":
            return self.ratios
        return tuple(float(rng.uniform(lo, hi)) for lo, hi in self.intervals)


def stat_ratio(source_stats, target_stats) -> ScaleSpec:
    """Ratio of target-domain to source-domain mean object size, per dimension."""
    src = (source_stats.mean_h, source_stats.mean_w, source_stats.mean_l)
    tgt = (target_stats.mean_h, target_stats.mean_w, target_stats.mean_l)
    if min(src) <= 0 or min(tgt) <= 0:
        raise ValueError("size statistics must be positive")
    return ScaleSpec.stat(*(t / s for t, s in zip(tgt, src)))


# -- 3D scaling ------------------------------------------------------------------

# local center shift (per unit of the length/width change) that keeps edge i fixed
_EDGE_SHIFT = ((0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0))


def scale_box_geometry_consistent(box: Box3D, ratios, visibility: Visibility | None = None) -> Box3D:
    s_h, s_w, s_l = ratios
    if visibility is None:
        visibility = visible_faces(box)
    h, w, l = box.h * s_h, box.w * s_w, box.l * s_l
    if isinstance(visibility, TwoFaces):
        sx, sz = CORNER_SIGNS[visibility.corner]
    elif isinstance(visibility, OneFace):
        sx, sz = _EDGE_SHIFT[visibility.edge]
    else:
        raise TypeError(f"not a visibility: {visibility!r}")
    # shifting by the half change keeps the anchor (corner or edge midpoint) in place
    dxl = sx * (box.l - l) / 2.0
    dzl = sz * (box.w - w) / 2.0
    c, s = math.cos(box.ry), math.sin(box.ry)
    x = box.x + (c * dxl + s * dzl)
    z = box.z + (-s * dxl + c * dzl)
    return Box3D(x, box.y, z, h, w, l, box.ry)


def anchor_point(box: Box3D, visibility: Visibility) -> tuple[float, float]:
    """BEV point that GCOS holds fixed for ``box``."""
    if isinstance(visibility, TwoFaces):
        sx, sz = CORNER_SIGNS[visibility.corner]
        return box.local_to_bev(sx * box.l / 2.0, sz * box.w / 2.0)
    sx, sz = _EDGE_SHIFT[visibility.edge]
    return box.local_to_bev(sx * box.l / 2.0, sz * box.w / 2.0)


# -- 2D compositing --------------------------------------------------------------


def _feather_alpha(h: int, w: int, radius: int) -> np.ndarray:
    rows = np.arange(h)
    cols = np.arange(w)
    dr = np.minimum(rows, h - 1 - rows)[:, None]
    dc = np.minimum(cols, w - 1 - cols)[None, :]
    d = np.minimum(dr, dc)
    return np.minimum(1.0, (d + 1.0) / (radius + 1.0))


def resolve_blend(mode: str, rng: np.random.Generator | None) -> str:
    if mode == "random":
        if rng is None:
            raise ValueError("random blending needs an rng")
        return BLEND_MODES[int(rng.integers(len(BLEND_MODES)))]
    if mode not in BLEND_MODES:
        raise ValueError(f"unknown blend mode {mode!r}")
    return mode


def blend_boundary(
    pasted: ImageBuffer,
    background: ImageBuffer,
    rect: tuple[int, int, int, int],
    mode: str = "random",
    rng: np.random.Generator | None = None,
    radius: int = FEATHER_RADIUS,
) -> ImageBuffer:
    """Soften the border of the pasted rectangle ``rect = (u0, v0, u1, v1)`` (inclusive).

    ``"feather"`` mixes patch and background linearly over a ``radius`` pixel
    band inside the rectangle; ``"none"`` returns ``pasted``; ``"random"``
    picks one of the two with ``rng``.
    """
    mode = resolve_blend(mode, rng)
    if mode == "none":
        return pasted
    u0, v0, u1, v1 = rect
    if not (0 <= u0 <= u1 < pasted.width and 0 <= v0 <= v1 < pasted.height):
        raise ValueError(f"blend rectangle {rect} outside the image")
    alpha = _feather_alpha(v1 - v0 + 1, u1 - u0 + 1, radius)[..., None]
    out = np.array(pasted.data)
    fg = pasted.data[v0 : v1 + 1, u0 : u1 + 1]
    bg = background.data[v0 : v1 + 1, u0 : u1 + 1]
    out[v0 : v1 + 1, u0 : u1 + 1] = bg + alpha * (fg - bg)
    return ImageBuffer(out)


def _axis_plan(s1, s2, t1, t2, size):
    """Pixel span and affine source map for one axis of a patch transfer."""
    sigma = (t2 - t1) / (s2 - s1)
    sc = (s1 + s2) / 2.0
    tc = (t1 + t2) / 2.0
    if sigma < 1.0:
        # shrinking: paste a crop expanded by 1/sigma so background covers the old extent
        half = (s2 - s1) / 2.0
        lo, hi = tc - half, tc + half
    else:
        lo, hi = t1, t2
    i0 = max(0, math.ceil(lo))
    i1 = min(size - 1, math.floor(hi))
    # x_src = i / sigma + offset, which is exactly i when sigma == 1 and sc == tc
    return i0, i1, sigma, sc - tc / sigma


def paste_patch(
    canvas: ImageBuffer,
    src_bbox,
    dst_bbox,
    source: ImageBuffer | None = None,
    blend: str = "none",
    rng: np.random.Generator | None = None,
):
    """Resample the ``src_bbox`` patch of ``source`` onto ``dst_bbox`` of ``canvas``.

    Boxes are ``(x1, y1, x2, y2)`` in continuous pixels and need not lie inside
    the image. When a side shrinks, the crop is expanded by the inverse ratio
    around its center, so after narrowing the object lands on ``dst_bbox`` and
    the rest of the old extent is refilled with surrounding background.
    Returns the new image and the pasted pixel rectangle (or ``None``).
    """
    source = canvas if source is None else source
    sx1, sy1, sx2, sy2 = src_bbox
    tx1, ty1, tx2, ty2 = dst_bbox
    if not (sx2 > sx1 and sy2 > sy1 and tx2 > tx1 and ty2 > ty1):
        raise ValueError("patch boxes must have positive extent")
    u0, u1, sig_x, off_x = _axis_plan(sx1, sx2, tx1, tx2, canvas.width)
    v0, v1, sig_y, off_y = _axis_plan(sy1, sy2, ty1, ty2, canvas.height)
    if u0 > u1 or v0 > v1:
        return canvas, None
    vv, uu = np.mgrid[v0 : v1 + 1, u0 : u1 + 1].astype(np.float64)
    x = uu / sig_x + off_x
    y = vv / sig_y + off_y
    # pixels whose source falls off the image keep the canvas content
    valid = (x >= -0.5) & (x <= source.width - 0.5) & (y >= -0.5) & (y <= source.height - 0.5)
    patch = sample_bilinear(source, x, y)
    out = np.array(canvas.data)
    region = out[v0 : v1 + 1, u0 : u1 + 1]
    region[valid] = patch[valid]
    rect = (u0, v0, u1, v1)
    pasted = ImageBuffer(out)
    return blend_boundary(pasted, canvas, rect, blend, rng), rect


def crop_paste(
    img: ImageBuffer,
    K: Intrinsics,
    box: Box3D,
    new_box: Box3D,
    blend: str = "none",
    rng: np.random.Generator | None = None,
    source: ImageBuffer | None = None,
):
    """Move the image patch of ``box`` onto the projection of ``new_box``.

    Raises :class:`SkipObject` when either box cannot be projected or the
    visible source patch is smaller than ``MIN_PATCH_AREA``.
    """
    shape = ImageShape(img.width, img.height)
    try:
        (cx1, cy1, cx2, cy2), _ = project_box(K, box, shape)
        src = projected_hull(K, box)
        dst = projected_hull(K, new_box)
    except ProjectionError as exc:
        raise SkipObject(f"projection: {exc}") from exc
    if (cx2 - cx1) * (cy2 - cy1) < MIN_PATCH_AREA:
        raise SkipObject(f"tiny patch: visible area below {MIN_PATCH_AREA:g} px^2")
    return paste_patch(img, src, dst, source=source, blend=blend, rng=rng)


# -- whole-sample augmentation -------------------------------------------------


@dataclass
class AugmentedSample:
    image: ImageBuffer
    labels: list[Label]
    provenance: list[dict] = field(default_factory=list)


def _describe(vis: Visibility) -> str:
    return f"one_face:{vis.edge}" if isinstance(vis, OneFace) else f"two_faces:{vis.corner}"


def _relabel(label: Label, new_box: Box3D, K: Intrinsics, shape: ImageShape) -> Label:
    if new_box == label.box:
        return label
    old = label.box
    alpha = label.alpha
    if alpha > -10.0:
        # keep alpha consistent with the shifted viewing ray
        ray_shift = math.atan2(new_box.x, new_box.z) - math.atan2(old.x, old.z)
        alpha = normalize_angle(alpha - ray_shift)
    try:
        bbox, _ = project_box(K, new_box, shape)
    except ProjectionError:
        bbox = label.bbox2d
    return replace(label, box=new_box, bbox2d=bbox, alpha=alpha)


def gcos_augment(
    image: ImageBuffer,
    K: Intrinsics,
    labels: list[Label],
    spec: ScaleSpec,
    rng=None,
    blend: str = "none",
) -> AugmentedSample:
    """Scale every object of one sample, pasting far objects first.

    Patches are always cropped from the untouched input so an earlier paste
    never leaks into a later crop. Ratios (and the blend mode, when random) are
    drawn for every object in paste order, including skipped ones, so a seed
    fully determines the result.
    """
    rng = np.random.default_rng(rng)
    shape = ImageShape(image.width, image.height)
    out_labels = list(labels)
    provenance: list[dict | None] = [None] * len(labels)
    order = sorted(
        range(len(labels)),
        key=lambda i: -(labels[i].box.z if labels[i].box is not None else -math.inf),
    )
    canvas = image
    for i in order:
        lab = labels[i]
        ratios = spec.draw(rng)
        mode = resolve_blend(blend, rng)
        entry = {
            "index": i,
            "class": lab.cls,
            "ratios": [float(r) for r in ratios],
            "blend": mode,
            "status": "skipped",
            "reason": None,
            "visibility": None,
        }
        provenance[i] = entry
        if lab.box is None:
            entry["reason"] = "no 3D box"
            continue
        try:
            vis = visible_faces(lab.box)
        except VisibilityError as exc:
            entry["reason"] = f"visibility: {exc}"
            continue
        entry["visibility"] = _describe(vis)
        try:
            new_box = scale_box_geometry_consistent(lab.box, ratios, vis)
        except ValueError as exc:
            entry["reason"] = f"scaling: {exc}"
            continue
        try:
            canvas, rect = crop_paste(canvas, K, lab.box, new_box, blend=mode, source=image)
        except SkipObject as exc:
            entry["reason"] = str(exc)
            continue
        entry["status"] = "applied"
        entry["paste_rect"] = list(rect) if rect is not None else None
        out_labels[i] = _relabel(lab, new_box, K, shape)
    return AugmentedSample(canvas, out_labels, provenance)
