import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locreg.core import (
    GimbalLockError,
    PointCloud,
    Pose6D,
    compose,
    euler_to_rotation,
    invert,
    matrix_to_pose,
    pose_to_matrix,
    rotation_to_euler,
    so3_exp,
    skew,
    transform_point,
    transform_points,
    wrap_angles,
)

angles = st.floats(-3.0, 3.0, allow_nan=False)
coords = st.floats(-50.0, 50.0, allow_nan=False)
unit = st.floats(-1.0, 1.0, allow_nan=False)
poses = st.tuples(angles, st.floats(-1.4, 1.4), angles, coords, coords, coords)


def rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def test_zero_angles_identity():
    assert np.array_equal(euler_to_rotation([0, 0, 0, 4, 5, 6]), np.eye(3))


def test_convention_is_z_y_x_product():
    x = np.array([0.3, -0.7, 1.1, 0, 0, 0])
    assert np.allclose(euler_to_rotation(x), rz(1.1) @ ry(-0.7) @ rx(0.3), atol=1e-15)


def test_quarter_turn_about_first_axis():
    R = euler_to_rotation([np.pi / 2, 0, 0, 0, 0, 0])
    assert np.allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(poses)
def test_rotation_is_orthonormal(x):
    R = euler_to_rotation(x)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(R) - 1) < 1e-9


def test_transform_point_basic():
    assert np.allclose(transform_point(Pose6D.identity(), [1, 2, 3]), [1, 2, 3])
    assert np.allclose(transform_point([0, 0, 0, 1, 0, 0], [0, 0, 0]), [1, 0, 0])


def test_transform_matches_homogeneous_matrix():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.uniform(-2, 2, 6)
        p = rng.uniform(-10, 10, 3)
        ph = pose_to_matrix(x) @ np.append(p, 1.0)
        assert np.abs(transform_point(x, p) - ph[:3]).max() < 1e-12


@settings(max_examples=100, deadline=None)
@given(poses, st.tuples(unit, unit, unit), st.tuples(unit, unit, unit), st.floats(-2, 2), st.floats(-2, 2))
def test_transform_affine(x, p1, p2, a, b):
    p1, p2 = np.array(p1), np.array(p2)
    t = np.array(x[3:])
    lhs = transform_point(x, a * p1 + b * p2)
    rhs = a * transform_point(x, p1) + b * transform_point(x, p2) - (a + b - 1) * t
    # absolute bound, scaled by the translation magnitude that cancels in rhs
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1.0, np.abs(t).max())


def test_transform_points_batch_matches_scalar():
    rng = np.random.default_rng(2)
    x = rng.normal(size=6)
    P = rng.normal(size=(20, 3))
    assert np.allclose(transform_points(x, P), [transform_point(x, p) for p in P], atol=1e-14)


def test_compose_identity_and_inverse():
    b = Pose6D(0.1, -0.2, 0.3, 1, 2, 3)
    assert np.allclose(compose(Pose6D.identity(), b).as_vector(), b.as_vector(), atol=1e-12)
    a = Pose6D(0.4, 0.5, -0.6, -1, 0.5, 2)
    assert np.allclose(pose_to_matrix(compose(a, invert(a))), np.eye(4), atol=1e-9)
    assert np.allclose(pose_to_matrix(invert(invert(a))), pose_to_matrix(a), atol=1e-9)


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = rng.uniform(-1.2, 1.2, 6), rng.uniform(-1.2, 1.2, 6)
        assert np.abs(pose_to_matrix(compose(a, b)) - pose_to_matrix(a) @ pose_to_matrix(b)).max() < 1e-12


@settings(max_examples=200, deadline=None)
@given(poses)
def test_euler_round_trip(x):
    R = euler_to_rotation(x)
    assert np.abs(euler_to_rotation(np.r_[rotation_to_euler(R), 0, 0, 0]) - R).max() < 1e-9


def test_gimbal_lock_is_reported():
    R = euler_to_rotation([0.2, np.pi / 2, 0.1, 0, 0, 0])
    with pytest.raises(GimbalLockError):
        rotation_to_euler(R)
    # the matrix itself stays valid
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)


def test_matrix_pose_round_trip():
    x = np.array([0.1, 0.2, 0.3, 4, 5, 6])
    assert np.allclose(matrix_to_pose(pose_to_matrix(x)).as_vector(), x, atol=1e-12)


def test_pose_rejects_non_finite():
    with pytest.raises(ValueError):
        Pose6D(np.nan, 0, 0, 0, 0, 0)


def test_wrap_angles_only_touches_rotation():
    v = wrap_angles([3 * np.pi / 2, -3 * np.pi / 2, 0.5, 10, 20, 30])
    assert np.allclose(v, [-np.pi / 2, np.pi / 2, 0.5, 10, 20, 30])


def test_so3_exp_matches_skew_series():
    phi = np.array([1e-3, -2e-3, 5e-4])
    assert np.allclose(so3_exp(phi), np.eye(3) + skew(phi) + 0.5 * skew(phi) @ skew(phi), atol=1e-9)


def test_point_cloud_ring_must_cover_points():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), ring=np.zeros(2, dtype=int))
