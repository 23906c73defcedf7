import math

import numpy as np
import pytest

from basepose.errors import DepthOutOfRange, NonPositiveDepth
from basepose.geometry import (
    CameraIntrinsics,
    CameraMount,
    DEFAULT_INTRINSICS,
    Pose,
    Transform2D,
    compose,
    ego_to_world,
    invert,
    points_body_to_world,
    points_world_to_body,
    project,
    unproject,
    world_to_ego,
    wrap_angle,
)


def test_wrap_angle_boundaries():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(math.pi + 1e-9) == pytest.approx(-math.pi + 1e-9)


def test_wrap_angle_is_2pi_shift():
    rng = np.random.default_rng(0)
    for theta in rng.uniform(-40.0, 40.0, size=1000):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        k = (theta - w) / (2 * math.pi)
        assert abs(k - round(k)) < 1e-12


def test_pose_canonicalizes_theta():
    p = Pose(0.0, 0.0, 4 * math.pi + 0.25)
    assert p.theta == pytest.approx(0.25)
    assert p.dim == 3
    assert Pose(0, 0, 0, 0.4).dim == 4


def test_pose_rejects_negative_height():
    with pytest.raises(ValueError):
        Pose(0, 0, 0, -0.1)


def test_compose_identity_and_symmetry():
    ident = Transform2D.identity()
    assert compose(ident, ident) == ident
    quarter = Transform2D(math.pi / 2, (0.0, 0.0))
    half = compose(quarter, quarter)
    assert half.rotation == pytest.approx(math.pi)
    assert half.translation == pytest.approx((0.0, 0.0))


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = Transform2D(rng.uniform(-math.pi, math.pi), tuple(rng.uniform(-5, 5, 2)))
        round_trip = compose(t, invert(t))
        assert abs(round_trip.rotation) < 1e-12
        assert np.allclose(round_trip.translation, 0.0, atol=1e-12)


def test_compose_order_b_then_a():
    a = Transform2D(math.pi / 2, (1.0, 0.0))
    b = Transform2D(0.0, (2.0, 0.0))
    pt = np.array([0.0, 0.0])
    via_compose = compose(a, b).apply_xy(pt)
    via_sequence = a.apply_xy(b.apply_xy(pt))
    assert np.allclose(via_compose, via_sequence, atol=1e-12)


def test_compose_associative():
    rng = np.random.default_rng(2)
    for _ in range(100):
        ts = [
            Transform2D(rng.uniform(-math.pi, math.pi), tuple(rng.uniform(-3, 3, 2)))
            for _ in range(3)
        ]
        left = compose(compose(ts[0], ts[1]), ts[2])
        right = compose(ts[0], compose(ts[1], ts[2]))
        assert abs(wrap_angle(left.rotation - right.rotation)) < 1e-12
        assert np.allclose(left.translation, right.translation, atol=1e-12)


def test_world_to_ego_trivial_frames():
    robot = Pose(1.3, -0.4, 0.7)
    rel = world_to_ego(robot, robot)
    assert np.allclose(rel.as_array(), 0.0, atol=1e-12)
    p = Pose(1.0, 2.0, 0.3)
    assert np.allclose(world_to_ego(p, Pose(0, 0, 0)).as_array(), p.as_array())


def test_world_to_ego_hand_example():
    rel = world_to_ego(Pose(1.0, 1.0, math.pi / 2), Pose(1.0, 0.0, math.pi / 2))
    assert np.allclose(rel.as_array(), [1.0, 0.0, 0.0], atol=1e-12)


def test_ego_to_world_hand_example():
    world = ego_to_world(Pose(1.0, 0.0, 0.0), Pose(1.0, 0.0, math.pi / 2))
    assert np.allclose(world.as_array(), [1.0, 1.0, math.pi / 2], atol=1e-12)


def test_ego_world_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = Pose(*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        r = Pose(*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        back = ego_to_world(world_to_ego(p, r), r)
        assert np.allclose(back.as_array(), p.as_array(), atol=1e-12)
        assert ego_to_world(Pose(0, 0, 0), r) == r


def test_height_passes_through_unchanged():
    p = Pose(1.0, 2.0, 0.5, 0.37)
    r = Pose(-0.5, 0.3, 1.2)
    assert world_to_ego(p, r).h == 0.37
    assert ego_to_world(world_to_ego(p, r), r).h == 0.37


def test_point_frame_round_trip():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-5, 5, (500, 3))
    robot = Pose(0.7, -1.1, 2.2)
    back = points_body_to_world(points_world_to_body(pts, robot), robot)
    assert np.allclose(back, pts, atol=1e-12)


def test_project_spot_values():
    intr = CameraIntrinsics(100, 100, 64, 64, 128, 128, 0.1, 10.0)
    assert project(intr, (0.0, 0.0, 1.0)) == pytest.approx((64.0, 64.0, 1.0))
    assert project(intr, (0.64, 0.0, 1.0)) == pytest.approx((128.0, 64.0, 1.0))


def test_project_rejects_points_behind_camera():
    intr = CameraIntrinsics(100, 100, 64, 64, 128, 128, 0.1, 10.0)
    with pytest.raises(NonPositiveDepth):
        project(intr, (0.0, 0.0, -1.0))
    with pytest.raises(NonPositiveDepth):
        project(intr, (0.0, 0.0, 0.05))


def test_unproject_spot_values_and_range():
    intr = CameraIntrinsics(100, 100, 64, 64, 128, 128, 0.1, 10.0)
    assert np.allclose(unproject(intr, 64, 64, 1.0), [0.0, 0.0, 1.0])
    assert np.allclose(unproject(intr, 128, 64, 2.0), [1.28, 0.0, 2.0])
    with pytest.raises(DepthOutOfRange):
        unproject(intr, 64, 64, 11.0)
    with pytest.raises(DepthOutOfRange):
        unproject(intr, 64, 64, 0.05)


def test_project_unproject_round_trip():
    intr = DEFAULT_INTRINSICS
    rng = np.random.default_rng(5)
    for _ in range(1000):
        u = rng.uniform(0, intr.width - 1)
        v = rng.uniform(0, intr.height - 1)
        d = rng.uniform(intr.depth_min + 1e-6, intr.depth_max)
        point = unproject(intr, u, v, d)
        u2, v2, d2 = project(intr, point)
        assert abs(u2 - u) < 1e-9 and abs(v2 - v) < 1e-9 and abs(d2 - d) < 1e-9


def test_camera_mount_frame_axes():
    mount = CameraMount(offset=(0.0, 0.0, 1.0), pitch=0.0)
    # A point straight ahead of the robot sits on the optical axis.
    cam = mount.points_body_to_camera(np.array([[2.0, 0.0, 1.0]]))
    assert np.allclose(cam, [[0.0, 0.0, 2.0]], atol=1e-12)
    # Body +y (left) maps to camera -x (right axis points along -y).
    cam = mount.points_body_to_camera(np.array([[0.0, 1.0, 1.0]]))
    assert np.allclose(cam, [[-1.0, 0.0, 0.0]], atol=1e-12)
    # A point below the camera maps to camera +y (down).
    cam = mount.points_body_to_camera(np.array([[0.0, 0.0, 0.0]]))
    assert np.allclose(cam, [[0.0, 1.0, 0.0]], atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 100, 64, 64, 128, 128, 0.1, 10.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(100, 100, 64, 64, 128, 128, 5.0, 1.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(100, 100, 64, 64, 0, 128, 0.1, 10.0)
