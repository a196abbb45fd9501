import math

import numpy as np
import pytest

from camgen3d.camera import ImageShape, Intrinsics
from camgen3d.dataio import format_calib, format_label
from camgen3d.geom3d import Box3D, Label, project_box
from camgen3d.imagecore import ImageBuffer, save_image

SMALL_K = Intrinsics(120.0, 118.0, 80.0, 48.0)
SMALL_SHAPE = ImageShape(160, 96)


def textured_image(width, height, seed=0, channels=3):
    """Smooth gradient plus a little structure so warps have something to move."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width] / max(width, height)
    base = [0.2 + 0.6 * x, 0.3 + 0.5 * y, 0.5 + 0.3 * np.sin(6 * x + 4 * y + rng.uniform(0, 1))]
    return ImageBuffer(np.stack(base[:channels], axis=-1))


def car(x, z, ry=0.3, h=1.5, w=1.6, l=3.9):
    box = Box3D(x, 1.6, z, h, w, l, ry)
    bbox, _ = project_box(SMALL_K, box, SMALL_SHAPE)
    alpha = ry - math.atan2(x, z)
    return Label("Car", box, bbox, 0.0, 0, alpha)


def write_dataset(root, n=3, seed=0):
    """Tiny KITTI-style tree with two cars and one DontCare per frame."""
    for d in ("image_2", "label_2", "calib"):
        (root / d).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        stem = f"{i:06d}"
        save_image(textured_image(SMALL_SHAPE.width, SMALL_SHAPE.height, seed + i), root / "image_2" / f"{stem}.png")
        (root / "calib" / f"{stem}.txt").write_text(format_calib(SMALL_K))
        labels = [
            car(rng.uniform(-3, -1), rng.uniform(12, 20), rng.uniform(-1, 1)),
            car(rng.uniform(1, 3), rng.uniform(8, 12), rng.uniform(-1, 1)),
        ]
        lines = [format_label(lab) for lab in labels]
        lines.append("DontCare -1 -1 -10 10.00 20.00 30.00 40.00 -1 -1 -1 -1000 -1000 -1000 -10")
        (root / "label_2" / f"{stem}.txt").write_text("".join(x + "\n" for x in lines))
    return root


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "data")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
