"""Ego-centric point-cloud rendering: pinhole projection with a one-point-
per-pixel z-buffer, plus dense surface sampling of scenes.

Rendering keeps the exact coordinates of surviving source points (returned
in the robot body frame), so renders are subsets of their sources up to a
rigid frame change. No hole filling, lighting, or sensor noise.
"""

from __future__ import annotations

import math

import numpy as np

from .cloud import PointCloud, StitchedCloud
from .errors import PlacementFailure
from .geometry import (
    CameraIntrinsics,
    CameraMount,
    DEFAULT_INTRINSICS,
    DEFAULT_MOUNT,
    Pose,
    points_world_to_body,
    project_points,
    wrap_angle,
)
from .scene import Box, Scene, collides, target_visible

DEFAULT_SURFACE_DENSITY = 400.0


def _sample_box_faces(box: Box, density: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform points on all six faces, about density * area in total."""
    ex, ey, ez = box.extents
    points = []
    # (face area, fixed axis, sign) for the six faces of the local box.
    faces = [
        (ey * ez, 0, +1), (ey * ez, 0, -1),
        (ex * ez, 1, +1), (ex * ez, 1, -1),
        (ex * ey, 2, +1), (ex * ey, 2, -1),
    ]
    half = np.array([ex, ey, ez]) / 2.0
    for area, axis, sign in faces:
        n = int(rng.poisson(density * area))
        if n == 0:
            continue
        local = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
        local[:, axis] = sign * half[axis]
        points.append(local)
    if not points:
        return np.zeros((0, 3), dtype=np.float64)
    local = np.concatenate(points)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.center[0]
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.center[1]
    world[:, 2] = local[:, 2] + box.center[2]
    return world


def surface_sample(scene: Scene, density: float = DEFAULT_SURFACE_DENSITY,
                   seed: int | None = None) -> StitchedCloud:
    """Point-sample every box surface of the scene at the given density.

    Deterministic per scene: the default seed derives from scene.seed.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    if seed is None:
        seed = scene.seed
    rng = np.random.default_rng([int(seed), 40009])
    positions, colors, labels = [], [], []
    for box in scene.all_boxes():
        pts = _sample_box_faces(box, density, rng)
        positions.append(pts)
        colors.append(np.tile(np.asarray(box.color, dtype=np.float32), (len(pts), 1)))
        labels.append(np.full(len(pts), box.segment_label, dtype=np.int32))
    cloud = PointCloud(
        np.concatenate(positions), np.concatenate(colors), np.concatenate(labels)
    )
    return StitchedCloud(cloud, voxel_size=0.0)


def render(source, robot: Pose,
           intr: CameraIntrinsics = DEFAULT_INTRINSICS,
           mount: CameraMount = DEFAULT_MOUNT) -> PointCloud:
    """Render the source from the robot's camera; one point per pixel.

    ``source`` is a StitchedCloud, PointCloud (scene frame), or Scene
    (surface-sampled on the fly). Surviving points are returned with their
    exact coordinates in the robot body frame, nearest depth winning each
    pixel (ties broken by input order).
    """
    if isinstance(source, Scene):
        source = surface_sample(source)
    if isinstance(source, StitchedCloud):
        source = source.cloud
    if len(source) == 0:
        return PointCloud.empty()

    body = points_world_to_body(source.positions, robot)
    cam = mount.points_body_to_camera(body)
    ui, vi, depth, valid = project_points(intr, cam)
    idx = np.flatnonzero(valid)
    if len(idx) == 0:
        return PointCloud.empty()
    pixel = vi[idx] * intr.width + ui[idx]
    order = np.lexsort((idx, depth[idx], pixel))
    pix_sorted = pixel[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    survivors = idx[order[first]]
    survivors.sort()
    return PointCloud(body[survivors], source.colors[survivors], source.labels[survivors])


def sample_scene_frames(scene: Scene, n_frames: int,
                        intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                        mount: CameraMount = DEFAULT_MOUNT,
                        seed: int = 0,
                        footprint_radius: float = 0.3,
                        min_visible_points: int = 20,
                        density: float = DEFAULT_SURFACE_DENSITY,
                        radius_range: tuple[float, float] = (1.2, 2.2)):
    """Capture n_frames views of the scene from a ring around the target.

    Viewpoints are spread over bearings around the target, kept only when
    collision-free and seeing the target, and each frame is paired with
    its exact capture pose. Raises PlacementFailure when the ring cannot
    supply n_frames valid viewpoints.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    source = surface_sample(scene, density)
    rng = np.random.default_rng([int(seed), scene.seed, 577])
    tx, ty = scene.target.center[0], scene.target.center[1]
    frames = []
    max_candidates = 16 * n_frames
    for attempt in range(max_candidates):
        bearing = 2.0 * math.pi * (attempt % n_frames) / n_frames + rng.uniform(-0.4, 0.4)
        radius = rng.uniform(*radius_range)
        pose = Pose(
            tx + radius * math.cos(bearing),
            ty + radius * math.sin(bearing),
            wrap_angle(bearing + math.pi + rng.uniform(-0.15, 0.15)),
        )
        if collides(scene, pose, footprint_radius):
            continue
        frame = render(source, pose, intr, mount)
        if not target_visible(scene, frame, min_visible_points):
            continue
        frames.append((frame, pose))
        if len(frames) == n_frames:
            return frames
    raise PlacementFailure(
        f"only {len(frames)}/{n_frames} valid capture viewpoints in {max_candidates} attempts"
    )
