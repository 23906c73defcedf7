"""Planar rigid transforms, poses, and the pinhole camera model.

Frame conventions, fixed once for the whole package: the robot body frame
has x forward, y left, angles counter-clockwise about +z; the camera frame
has z forward, x right, y down. Torso height h is absolute (measured along
gravity) and passes through planar frame changes unchanged. All arithmetic
is double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DepthOutOfRange, NonPositiveDepth

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Map an angle (scalar or ndarray) into (-pi, pi]."""
    wrapped = np.remainder(theta, TWO_PI)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


def rotation2d(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    """Planar robot pose (x, y, theta), optionally with torso height h.

    theta is canonicalized into (-pi, pi] on construction; h >= 0 when
    present. The pose dimension d is 3 without h and 4 with it.
    """

    x: float
    y: float
    theta: float
    h: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        if self.h is not None:
            h = float(self.h)
            if h < 0.0:
                raise ValueError(f"torso height must be >= 0, got {h}")
            object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return 3 if self.h is None else 4

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def as_array(self) -> np.ndarray:
        if self.h is None:
            return np.array([self.x, self.y, self.theta], dtype=np.float64)
        return np.array([self.x, self.y, self.theta, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, vec) -> "Pose":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape == (3,):
            return cls(vec[0], vec[1], vec[2])
        if vec.shape == (4,):
            return cls(vec[0], vec[1], vec[2], vec[3])
        raise ValueError(f"pose vector must have shape (3,) or (4,), got {vec.shape}")


@dataclass(frozen=True)
class Transform2D:
    """Planar rigid transform: rotate by ``rotation`` then translate."""

    rotation: float
    translation: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "rotation", wrap_angle(float(self.rotation)))
        tx, ty = self.translation
        object.__setattr__(self, "translation", (float(tx), float(ty)))

    @classmethod
    def identity(cls) -> "Transform2D":
        return cls(0.0, (0.0, 0.0))

    def apply_xy(self, xy: np.ndarray) -> np.ndarray:
        """Apply to planar points of shape (..., 2)."""
        xy = np.asarray(xy, dtype=np.float64)
        out = xy @ rotation2d(self.rotation).T
        out[..., 0] += self.translation[0]
        out[..., 1] += self.translation[1]
        return out

    def apply_pose(self, p: Pose) -> Pose:
        nx, ny = self.apply_xy(p.xy)
        return Pose(nx, ny, p.theta + self.rotation, p.h)


def compose(a: Transform2D, b: Transform2D) -> Transform2D:
    """Transform equal to applying b first, then a."""
    tb = rotation2d(a.rotation) @ np.array(b.translation) + np.array(a.translation)
    return Transform2D(a.rotation + b.rotation, (tb[0], tb[1]))


def invert(t: Transform2D) -> Transform2D:
    ti = -(rotation2d(-t.rotation) @ np.array(t.translation))
    return Transform2D(-t.rotation, (ti[0], ti[1]))


def pose_to_transform(p: Pose) -> Transform2D:
    """Transform taking body-frame coordinates of ``p`` to world coordinates."""
    return Transform2D(p.theta, (p.x, p.y))


def world_to_ego(p_world: Pose, robot: Pose) -> Pose:
    """Express a world-frame pose in the body frame of ``robot``.

    Only (x, y, theta) change frames; h is absolute and passes through.
    """
    d = p_world.xy - robot.xy
    local = rotation2d(-robot.theta) @ d
    return Pose(local[0], local[1], p_world.theta - robot.theta, p_world.h)


def ego_to_world(p_ego: Pose, robot: Pose) -> Pose:
    """Inverse of :func:`world_to_ego` for the same robot pose."""
    w = rotation2d(robot.theta) @ p_ego.xy + robot.xy
    return Pose(w[0], w[1], p_ego.theta + robot.theta, p_ego.h)


def points_world_to_body(points: np.ndarray, robot: Pose) -> np.ndarray:
    """Transform (N, 3) world-frame points into the robot body frame.

    The body frame origin sits on the floor under the robot, so z is
    unchanged.
    """
    points = np.asarray(points, dtype=np.float64)
    out = np.empty_like(points)
    out[:, :2] = (points[:, :2] - robot.xy) @ rotation2d(-robot.theta).T
    out[:, 2] = points[:, 2]
    return out


def points_body_to_world(points: np.ndarray, robot: Pose) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    out = np.empty_like(points)
    out[:, :2] = points[:, :2] @ rotation2d(robot.theta).T + robot.xy
    out[:, 2] = points[:, 2]
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with pixel grid size and valid depth range."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float
    depth_max: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.depth_min < self.depth_max):
            raise ValueError("require 0 < depth_min < depth_max")
        if self.width < 1 or self.height < 1:
            raise ValueError("image extents must be >= 1 pixel")


DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=110.0, fy=110.0, cx=64.0, cy=64.0,
    width=128, height=128, depth_min=0.1, depth_max=10.0,
)


@dataclass(frozen=True)
class CameraMount:
    """Rigid camera offset from the body frame plus downward pitch.

    At pitch 0 the optical axis points along body x (robot forward);
    positive pitch tilts it toward the floor.
    """

    offset: tuple[float, float, float] = (0.0, 0.0, 1.0)
    pitch: float = 0.35

    def rotation_body_to_camera(self) -> np.ndarray:
        """Rows are the camera x (right), y (down), z (forward) axes in body coords."""
        c, s = math.cos(self.pitch), math.sin(self.pitch)
        return np.array(
            [
                [0.0, -1.0, 0.0],
                [-s, 0.0, -c],
                [c, 0.0, -s],
            ],
            dtype=np.float64,
        )

    def points_body_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - np.array(self.offset)) @ self.rotation_body_to_camera().T


DEFAULT_MOUNT = CameraMount()


def project(intr: CameraIntrinsics, point_cam) -> tuple[float, float, float]:
    """Project one camera-frame point to (u, v, depth); caller checks bounds."""
    x, y, z = (float(v) for v in point_cam)
    if z <= intr.depth_min:
        raise NonPositiveDepth(f"depth {z} <= depth_min {intr.depth_min}")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, z


def unproject(intr: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """Camera-frame point whose projection is (u, v, depth)."""
    if not (intr.depth_min <= depth <= intr.depth_max):
        raise DepthOutOfRange(
            f"depth {depth} outside [{intr.depth_min}, {intr.depth_max}]"
        )
    return np.array(
        [(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth],
        dtype=np.float64,
    )


def project_points(intr: CameraIntrinsics, points_cam: np.ndarray):
    """Vectorized projection of (N, 3) camera-frame points.

    Returns (u, v, depth, valid) where valid marks points inside the depth
    range and the pixel grid after rounding to the nearest pixel center.
    """
    points_cam = np.asarray(points_cam, dtype=np.float64)
    z = points_cam[:, 2]
    valid = (z > intr.depth_min) & (z <= intr.depth_max)
    zsafe = np.where(valid, z, 1.0)
    u = intr.fx * points_cam[:, 0] / zsafe + intr.cx
    v = intr.fy * points_cam[:, 1] / zsafe + intr.cy
    ui = np.floor(u + 0.5).astype(np.int64)
    vi = np.floor(v + 0.5).astype(np.int64)
    valid &= (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
    return ui, vi, z, valid
