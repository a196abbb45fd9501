import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camgen3d.camera import (
    BehindCameraError,
    ImageShape,
    Intrinsics,
    backproject,
    focal_from_fov,
    fov,
    pixel_size,
    project,
    scale_intrinsics,
)


def test_kitti_like_fov():
    K = Intrinsics(727.1, 725.0, 621.0, 187.5)
    deg_w, deg_h = fov(K, ImageShape(1242, 375)).degrees()
    assert deg_w == pytest.approx(81.0, abs=0.1)
    assert deg_h == pytest.approx(29.0, abs=0.1)


def test_focal_from_fov_inverts_fov():
    K = Intrinsics(500.0, 400.0, 0, 0)
    f = fov(K, ImageShape(640, 480))
    assert focal_from_fov(640, f.fov_w) == pytest.approx(500.0, rel=1e-14)
    assert focal_from_fov(480, f.fov_h) == pytest.approx(400.0, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(50, 3000),
    st.integers(16, 4000),
    st.integers(16, 4000),
    st.floats(0.3, 3.0),
)
def test_fov_invariant_under_joint_scaling(f, w, h, r):
    K = Intrinsics(f, f, w / 2, h / 2)
    a = fov(K, ImageShape(w, h))
    b = fov(scale_intrinsics(K, r, r), ImageShape(r * w, r * h))
    assert abs(a.fov_w - b.fov_w) < 1e-12
    assert abs(a.fov_h - b.fov_h) < 1e-12


def test_scale_intrinsics_anisotropic():
    K = scale_intrinsics(Intrinsics(100.0, 200.0, 50.0, 60.0), 0.5, 2.0)
    assert K == Intrinsics(50.0, 400.0, 25.0, 120.0)
    with pytest.raises(ValueError):
        scale_intrinsics(K, 0.0, 1.0)


def test_pixel_size():
    assert pixel_size(Intrinsics(100.0, 100.0, 0, 0)) == pytest.approx(math.sqrt(2) / 100)
    K = Intrinsics(700.0, 650.0, 0, 0)
    assert pixel_size(scale_intrinsics(K, 0.5, 0.5)) == pytest.approx(2 * pixel_size(K), rel=1e-15)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0, 0)
    with pytest.raises(ValueError):
        Intrinsics(1.0, math.inf, 0, 0)
    with pytest.raises(ValueError):
        ImageShape(0, 10)


def test_project_backproject_roundtrip():
    K = Intrinsics(721.5, 721.5, 609.6, 172.9)
    pts = np.array([[1.0, 1.5, 10.0], [-4.0, 0.2, 35.0]])
    uv = project(K, pts)
    assert np.allclose(backproject(K, uv, pts[:, 2]), pts, atol=1e-12)
    assert np.allclose(project(K, [0.0, 0.0, 5.0]), [609.6, 172.9])


def test_project_rejects_points_behind():
    with pytest.raises(BehindCameraError):
        project(Intrinsics(1, 1, 0, 0), [0.0, 0.0, -1.0])
    with pytest.raises(BehindCameraError):
        backproject(Intrinsics(1, 1, 0, 0), [0.0, 0.0], 0.0)
