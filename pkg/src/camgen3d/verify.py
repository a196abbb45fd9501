"""Executable invariant checks behind ``camgen3d verify``.

Every check draws from its own seeded generator and reports the worst
residual it saw next to the tolerance it was held to.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .camera import ImageShape, Intrinsics, focal_from_fov, fov, pixel_size, scale_intrinsics
from .dataio import DATASETS, parse_label_file, serialize_label_file
from .gcos import anchor_point, scale_box_geometry_consistent, stat_ratio
from .geom3d import Box3D, bev_iou, bev_rect, dimension_replacement_analysis, iou3d, visible_faces
from .imagecore import ImageBuffer
from .pit import make_pit_frame, pit_forward_point, pit_inverse_point, pit_unwarp_image, pit_warp_image, point_weight
from .scaledepth import DepthCodec, commutation_residuals, decode_depth, encode_depth


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.3f}s)"


def random_intrinsics(rng, n):
    f = rng.uniform(200.0, 2000.0, n)
    return [Intrinsics(fi, fi * rng.uniform(0.9, 1.1), rng.uniform(100, 1000), rng.uniform(100, 600)) for fi in f]


def random_box(rng) -> Box3D:
    """A car-like box in front of the camera whose footprint excludes the origin."""
    while True:
        box = Box3D(
            rng.uniform(-15, 15),
            rng.uniform(0.5, 2.5),
            rng.uniform(3, 60),
            rng.uniform(0.8, 3.0),
            rng.uniform(0.8, 3.0),
            rng.uniform(1.0, 8.0),
            rng.uniform(-math.pi, math.pi),
        )
        try:
            visible_faces(box)
            return box
        except ValueError:
            continue


def check_fov_invariance(rng) -> CheckResult:
    worst = 0.0
    for K in random_intrinsics(rng, 100):
        shape = ImageShape(int(rng.integers(64, 2048)), int(rng.integers(64, 2048)))
        r = rng.uniform(0.3, 3.0)
        a = fov(K, shape)
        # real-valued scaled extent; rounding the raster is a separate effect
        b = fov(scale_intrinsics(K, r, r), ImageShape(r * shape.width, r * shape.height))
        worst = max(worst, abs(a.fov_w - b.fov_w), abs(a.fov_h - b.fov_h))
    return CheckResult("fov invariance under image+intrinsics scaling", worst < 1e-12, f"max |dFOV| = {worst:.2e} rad (tol 1e-12)")


def check_commutation(rng) -> CheckResult:
    n = 10_000
    f = rng.uniform(100, 3000, n)
    r = rng.uniform(0.2, 3.0, n)
    x = rng.uniform(-2, 2, n) * f
    worst = 0.0
    for fi, ri, xi in zip(f[:200], r[:200], x[:200]):
        K = Intrinsics(fi, fi, 0.0, 0.0)
        worst = max(worst, float(commutation_residuals(K, ri, ri, [[xi, xi]]).max()))
    # vectorised over the full sweep, same formulas as commutation_residuals
    u1 = (r * f) * np.arctan((r * x) / (r * f))
    u2 = r * (f * np.arctan(x / f))
    x2 = (r * f) * np.tan(u2 / (r * f))
    worst = max(worst, float(np.max(np.abs(u1 - u2))), float(np.max(np.abs(r * x - x2))))
    K = Intrinsics(500.0, 500.0, 0.0, 0.0)
    worked = commutation_residuals(K, 0.5, 0.5, [[100.0, 100.0]])
    u_worked = float(pit_forward_point(scale_intrinsics(K, 0.5, 0.5), 50.0, 50.0)[0])
    ok = worst < 1e-9 and abs(u_worked - 49.349) < 1e-3 and float(worked.max()) < 1e-9
    return CheckResult("MS/PIT commutation", ok, f"max residual = {worst:.2e} (tol 1e-9); worked u = {u_worked:.4f}")


def check_pit_roundtrip(rng) -> CheckResult:
    f = 500.0
    K = Intrinsics(f, f, 0.0, 0.0)
    X = rng.uniform(-1, 1, 10_000) * f * math.tan(1.3)
    U, _ = pit_forward_point(K, X, 0.0)
    X2, _ = pit_inverse_point(K, U, 0.0)
    pt_err = float(np.max(np.abs(X - X2)))
    img = _gradient_image(256, 256)
    frame = make_pit_frame(Intrinsics(200.0, 200.0, 128.0, 128.0), ImageShape(256, 256))
    back = pit_unwarp_image(frame, pit_warp_image(frame, img))
    im_err = _central_error(img, back, 0.8)
    ok = pt_err < 1e-9 and im_err < 2 / 255
    return CheckResult("PIT roundtrip", ok, f"point {pt_err:.2e} (tol 1e-9); image {im_err * 255:.3f}/255 (tol 2/255)")


def check_depth_codec(rng) -> CheckResult:
    codec = DepthCodec()
    worst_inv = worst_scale = 0.0
    for K in random_intrinsics(rng, 100):
        d = rng.uniform(1, 100)
        worst_inv = max(worst_inv, abs(decode_depth(codec, encode_depth(codec, d, K), K) - d) / d)
        r = rng.uniform(0.3, 1.0)
        ratio = encode_depth(codec, d, scale_intrinsics(K, r, r)) / encode_depth(codec, d, K)
        worst_scale = max(worst_scale, abs(ratio * r - 1.0))
    ok = worst_inv < 1e-12 and worst_scale < 1e-12
    return CheckResult("pixel-size depth codec", ok, f"inverse rel err {worst_inv:.2e}; 1/r scaling err {worst_scale:.2e} (tol 1e-12)")


def check_weight_map(rng) -> CheckResult:
    K = Intrinsics(500.0, 500.0, 600.0, 600.0)
    _, _, s0 = point_weight(K, 0.0, 0.0)
    U = K.fx * math.pi / 4
    _, _, s1 = point_weight(K, U, K.fy * math.pi / 4)
    e0 = abs(float(s0) - pixel_size(K))
    e1 = abs(float(s1) / (2 * pixel_size(K)) - 1.0)
    ok = e0 < 1e-6 and e1 < 0.01
    return CheckResult("weight map", ok, f"|s(0)-s_K| = {e0:.2e} (tol 1e-6); rel err at X=f: {e1:.2%} (tol 1%)")


def check_gcos_anchors(rng) -> CheckResult:
    drift = 0.0
    exact = True
    for _ in range(1000):
        box = random_box(rng)
        ratios = tuple(rng.uniform(0.5, 2.0, 3))
        vis = visible_faces(box)
        new = scale_box_geometry_consistent(box, ratios, vis)
        a0 = np.array(anchor_point(box, vis))
        a1 = np.array(anchor_point(new, vis))
        drift = max(drift, float(np.max(np.abs(a0 - a1))))
        exact &= new.y == box.y and new.ry == box.ry
        exact &= new.dims == (box.h * ratios[0], box.w * ratios[1], box.l * ratios[2])
    ok = drift < 1e-9 and exact
    return CheckResult("GCOS anchors", ok, f"anchor drift {drift:.2e} m (tol 1e-9); ground/yaw/dims exact: {exact}")


def check_gcos_statistics(rng) -> CheckResult:
    spec = stat_ratio(DATASETS["nuscenes"].stats, DATASETS["kitti"].stats)
    h = rng.normal(1.71, 0.1, 2000)
    h += 1.71 - h.mean()
    out = []
    for hi in h:
        box = Box3D(rng.uniform(-10, 10), 1.6, rng.uniform(8, 50), hi, 1.9, 4.6, rng.uniform(-3, 3))
        out.append(scale_box_geometry_consistent(box, spec.ratios).h)
    err = abs(float(np.mean(out)) - 1.52)
    return CheckResult("GCOS statistics", err < 1e-6, f"augmented mean height {np.mean(out):.8f} (target 1.52, tol 1e-6)")


def _mc_inside(box: Box3D, x, z):
    c, s = math.cos(box.ry), math.sin(box.ry)
    dx, dz = x - box.x, z - box.z
    xl = c * dx - s * dz
    zl = s * dx + c * dz
    return (np.abs(xl) <= box.l / 2) & (np.abs(zl) <= box.w / 2)


def mc_ious(a: Box3D, b: Box3D, rng, n=100_000):
    """Monte-Carlo BEV and 3D IoU by point sampling in a bounding region."""
    pts = np.vstack([bev_rect(a), bev_rect(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    x = rng.uniform(lo[0], hi[0], n)
    z = rng.uniform(lo[1], hi[1], n)
    ia, ib = _mc_inside(a, x, z), _mc_inside(b, x, z)
    area = (hi[0] - lo[0]) * (hi[1] - lo[1])
    inter_bev = np.mean(ia & ib) * area
    bev = inter_bev / (a.l * a.w + b.l * b.w - inter_bev)
    ylo, yhi = min(a.y - a.h, b.y - b.h), max(a.y, b.y)
    y = rng.uniform(ylo, yhi, n)
    ja = ia & (y >= a.y - a.h) & (y <= a.y)
    jb = ib & (y >= b.y - b.h) & (y <= b.y)
    inter_vol = np.mean(ja & jb) * area * (yhi - ylo)
    vol = inter_vol / (a.volume + b.volume - inter_vol)
    return float(bev), float(vol)


def random_overlapping_pair(rng):
    a = Box3D(rng.uniform(-5, 5), rng.uniform(1, 2), rng.uniform(10, 30), rng.uniform(1, 2.5), rng.uniform(1, 3), rng.uniform(2, 6), rng.uniform(-math.pi, math.pi))
    b = Box3D(a.x + rng.uniform(-1.5, 1.5), a.y + rng.uniform(-0.5, 0.5), a.z + rng.uniform(-1.5, 1.5), rng.uniform(1, 2.5), rng.uniform(1, 3), rng.uniform(2, 6), rng.uniform(-math.pi, math.pi))
    return a, b


def check_iou_oracle(rng) -> CheckResult:
    worst = 0.0
    for _ in range(50):
        a, b = random_overlapping_pair(rng)
        mb, mv = mc_ious(a, b, rng)
        worst = max(worst, abs(bev_iou(a, b) - mb), abs(iou3d(a, b) - mv))
    return CheckResult("rotated BEV/3D IoU vs Monte-Carlo", worst < 0.01, f"max |dIoU| = {worst:.4f} (tol 0.01)")


def check_dimension_replacement(rng) -> CheckResult:
    gts = [random_box(rng) for _ in range(30)]
    preds = [Box3D(g.x, g.y, g.z, g.h * 1.15, g.w * 1.15, g.l * 1.15, g.ry) for g in gts]
    _, steps = dimension_replacement_analysis(preds, gts, ((), ("h",), ("h", "w", "l")))
    means = [s.mean_iou3d for s in steps]
    ok = all(b >= a for a, b in zip(means, means[1:])) and abs(means[-1] - 1.0) < 1e-9
    return CheckResult("dimension replacement", ok, " -> ".join(f"{m:.4f}" for m in means))


def check_label_roundtrip(rng) -> CheckResult:
    ok = True
    for _ in range(100):
        text = "".join(canonical_label_line(rng) + "\n" for _ in range(int(rng.integers(0, 8))))
        ok &= serialize_label_file(parse_label_file(text)) == text
    return CheckResult("label roundtrip", ok, "100 canonical files byte-identical" if ok else "mismatch")


def check_table_fov(rng) -> CheckResult:
    worst = 0.0
    for info in DATASETS.values():
        f_w = focal_from_fov(info.shape.width, math.radians(info.fov_w_deg))
        f_h = focal_from_fov(info.shape.height, math.radians(info.fov_h_deg))
        f = (f_w + f_h) / 2.0  # a single square-pixel focal length must explain both FOVs
        got_w, got_h = fov(Intrinsics(f, f, 0.0, 0.0), info.shape).degrees()
        worst = max(worst, abs(got_w - info.fov_w_deg), abs(got_h - info.fov_h_deg))
    return CheckResult("dataset FOV self-consistency", worst < 0.5, f"max |dFOV| = {worst:.3f} deg (tol 0.5)")


def canonical_label_line(rng) -> str:
    cls = ["Car", "Pedestrian", "Cyclist", "Van"][int(rng.integers(4))]
    x1, y1 = rng.uniform(0, 1000), rng.uniform(0, 300)
    vals = [
        rng.uniform(0, 1), rng.uniform(-3.14, 3.14),
        x1, y1, x1 + rng.uniform(5, 200), y1 + rng.uniform(5, 70),
        rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 8),
        rng.uniform(-20, 20), rng.uniform(0, 3), rng.uniform(2, 80), rng.uniform(-3.14, 3.14),
    ]
    s = [f"{v:.2f}" for v in vals]
    return " ".join([cls, s[0], str(int(rng.integers(4))), *s[1:]])


def _gradient_image(w, h):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = 0.5 + 0.4 * np.sin(xx / w * math.pi) * np.cos(yy / h * math.pi / 2)
    g = xx / (w - 1)
    b = yy / (h - 1)
    return ImageBuffer(np.stack([r, g, b], axis=-1))


def _central_error(a: ImageBuffer, b: ImageBuffer, frac: float) -> float:
    h, w = a.height, a.width
    mh, mw = int(round(h * (1 - frac) / 2)), int(round(w * (1 - frac) / 2))
    return float(np.max(np.abs(a.data[mh : h - mh, mw : w - mw] - b.data[mh : h - mh, mw : w - mw])))


CHECKS: list[Callable[[np.random.Generator], CheckResult]] = [
    check_fov_invariance,
    check_commutation,
    check_pit_roundtrip,
    check_depth_codec,
    check_weight_map,
    check_gcos_anchors,
    check_gcos_statistics,
    check_iou_oracle,
    check_dimension_replacement,
    check_label_roundtrip,
    check_table_fov,
]


def run_all(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, check in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        try:
            res = check(rng)
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(check.__name__, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
