"""Synthetic 2.5-D scenes: a floor plane, oriented obstacle boxes, and a
labeled target box, with collision and visibility queries.

Scenes are generated from a SceneSpec: furniture is drawn from the spec's
layout id (fixed across rollouts of one layout), while target placement,
size, and color are drawn from the per-scene seed. Segment labels are 0
for the floor, 1..n for obstacles, n+1 for the target.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import FormatVersionMismatch, IoFailure, PlacementFailure
from .geometry import Pose, rotation2d, wrap_angle

SCENE_FORMAT_VERSION = 1
FLOOR_LABEL = 0


@dataclass(frozen=True)
class Box:
    """Axis-oriented box: center, full extents, yaw about +z."""

    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    yaw: float
    color: tuple[float, float, float]
    segment_label: int

    def __post_init__(self):
        if min(self.extents) <= 0:
            raise ValueError("box extents must be positive")

    @property
    def top(self) -> float:
        return self.center[2] + self.extents[2] / 2.0

    def footprint_corners(self) -> np.ndarray:
        """Ground-plane corners, shape (4, 2)."""
        hx, hy = self.extents[0] / 2.0, self.extents[1] / 2.0
        local = np.array([[hx, hy], [hx, -hy], [-hx, -hy], [-hx, hy]])
        return local @ rotation2d(self.yaw).T + np.array(self.center[:2])

    def footprint_distance(self, xy) -> float:
        """Distance from a point to the box footprint (0 inside)."""
        local = rotation2d(-self.yaw) @ (np.asarray(xy, dtype=np.float64) - np.array(self.center[:2]))
        half = np.array(self.extents[:2]) / 2.0
        outside = local - np.clip(local, -half, half)
        return float(np.hypot(outside[0], outside[1]))


def _interval(points: np.ndarray, axis: np.ndarray) -> tuple[float, float]:
    proj = points @ axis
    return float(proj.min()), float(proj.max())


def footprints_overlap(a: Box, b: Box, eps: float = 1e-12) -> bool:
    """Separating-axis test on the two ground-plane rectangles.

    Touching edges do not count as overlap.
    """
    ca, cb = a.footprint_corners(), b.footprint_corners()
    for yaw in (a.yaw, b.yaw):
        rot = rotation2d(yaw)
        for axis in (rot[:, 0], rot[:, 1]):
            lo_a, hi_a = _interval(ca, axis)
            lo_b, hi_b = _interval(cb, axis)
            if min(hi_a, hi_b) - max(lo_a, lo_b) <= eps:
                return False
    return True


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for generating scenes of one task family.

    Furniture depends only on ``layout_id``; everything drawn per scene
    (target placement, extents, color) depends on the generation seed.
    ``sides`` is 1 for a single approach sector in front of the target and
    2 for the two mirror sectors left and right of its facing axis.
    """

    name: str = "canonical"
    layout_id: int = 0
    bounds: tuple[float, float, float, float] = (-3.0, 3.0, -3.0, 3.0)
    floor_color: tuple[float, float, float] = (0.45, 0.45, 0.45)
    floor_thickness: float = 0.1
    n_obstacles: tuple[int, int] = (2, 4)
    obstacle_extent_xy: tuple[float, float] = (0.3, 0.9)
    obstacle_extent_z: tuple[float, float] = (0.4, 1.2)
    edge_band: float = 0.8
    protected_radius: float = 1.4
    target_center: tuple[float, float] = (1.0, 0.0)
    target_yaw: float = math.pi
    target_jitter_xy: float = 0.22
    target_yaw_jitter: float = 0.0
    target_extent_xy: tuple[float, float] = (0.3, 0.5)
    target_extent_z: tuple[float, float] = (0.35, 0.6)
    sides: int = 1
    approach_distance: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        kwargs = dict(d)
        for key in (
            "bounds", "floor_color", "n_obstacles", "obstacle_extent_xy",
            "obstacle_extent_z", "target_center", "target_extent_xy",
            "target_extent_z",
        ):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def sector_centers(self) -> list[float]:
        """Approach-sector centers relative to the target's facing axis."""
        if self.sides == 1:
            return [0.0]
        if self.sides == 2:
            return [math.pi / 2.0, -math.pi / 2.0]
        raise ValueError(f"sides must be 1 or 2, got {self.sides}")


@dataclass
class Scene:
    """One generated world: floor, obstacles, target, and anchor poses.

    ``reference_poses`` anchor demonstration collection (one per approach
    side); ``task_reference`` anchors the task-area region in front of the
    target and equals ``reference_poses[0]`` for one-sided tasks.
    """

    bounds: tuple[float, float, float, float]
    floor: Box
    obstacles: list[Box]
    target: Box
    seed: int
    layout_id: int
    name: str
    reference_poses: list[Pose]
    task_reference: Pose

    def all_boxes(self) -> list[Box]:
        return [self.floor, *self.obstacles, self.target]

    def solid_boxes(self) -> list[Box]:
        """Boxes that participate in collision (everything but the floor)."""
        return [*self.obstacles, self.target]


def _anchor_pose(target_xy, target_yaw: float, sector: float, distance: float) -> Pose:
    direction = target_yaw + sector
    x = target_xy[0] + distance * math.cos(direction)
    y = target_xy[1] + distance * math.sin(direction)
    return Pose(x, y, wrap_angle(direction + math.pi))


def _bright_color(rng: np.random.Generator) -> tuple[float, float, float]:
    """Saturated hue distinct from the grey floor and muted furniture."""
    hue = rng.uniform(0.0, 6.0)
    k = int(hue)
    f = hue - k
    table = {
        0: (1.0, f, 0.15), 1: (1.0 - f, 1.0, 0.15), 2: (0.15, 1.0, f),
        3: (0.15, 1.0 - f, 1.0), 4: (f, 0.15, 1.0), 5: (1.0, 0.15, 1.0 - f),
    }
    return table[k % 6]


def _box_in_bounds(box: Box, bounds) -> bool:
    xmin, xmax, ymin, ymax = bounds
    corners = box.footprint_corners()
    return bool(
        (corners[:, 0] >= xmin).all() and (corners[:, 0] <= xmax).all()
        and (corners[:, 1] >= ymin).all() and (corners[:, 1] <= ymax).all()
    )


def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    """Deterministically generate one scene for (spec, seed)."""
    xmin, xmax, ymin, ymax = spec.bounds
    width, height = xmax - xmin, ymax - ymin
    floor = Box(
        center=((xmin + xmax) / 2.0, (ymin + ymax) / 2.0, -spec.floor_thickness / 2.0),
        extents=(width, height, spec.floor_thickness),
        yaw=0.0,
        color=spec.floor_color,
        segment_label=FLOOR_LABEL,
    )

    rng_layout = np.random.default_rng([int(spec.layout_id), 7109])
    count = int(rng_layout.integers(spec.n_obstacles[0], spec.n_obstacles[1] + 1))
    obstacles: list[Box] = []
    protected = np.array(spec.target_center)
    for i in range(count):
        for _ in range(1000):
            ex = rng_layout.uniform(*spec.obstacle_extent_xy)
            ey = rng_layout.uniform(*spec.obstacle_extent_xy)
            ez = rng_layout.uniform(*spec.obstacle_extent_z)
            # Furniture hugs the walls so the task area stays navigable.
            side = int(rng_layout.integers(4))
            if side == 0:
                cx, cy = rng_layout.uniform(xmin, xmin + spec.edge_band), rng_layout.uniform(ymin, ymax)
            elif side == 1:
                cx, cy = rng_layout.uniform(xmax - spec.edge_band, xmax), rng_layout.uniform(ymin, ymax)
            elif side == 2:
                cx, cy = rng_layout.uniform(xmin, xmax), rng_layout.uniform(ymin, ymin + spec.edge_band)
            else:
                cx, cy = rng_layout.uniform(xmin, xmax), rng_layout.uniform(ymax - spec.edge_band, ymax)
            yaw = rng_layout.uniform(-math.pi / 6.0, math.pi / 6.0)
            grey = rng_layout.uniform(0.25, 0.6)
            box = Box(
                center=(cx, cy, ez / 2.0),
                extents=(ex, ey, ez),
                yaw=yaw,
                color=(grey, grey * rng_layout.uniform(0.7, 1.0), grey * 0.6),
                segment_label=i + 1,
            )
            if not _box_in_bounds(box, spec.bounds):
                continue
            if np.hypot(cx - protected[0], cy - protected[1]) < spec.protected_radius:
                continue
            if any(footprints_overlap(box, other) for other in obstacles):
                continue
            obstacles.append(box)
            break
        else:
            raise PlacementFailure(f"no valid placement for obstacle {i}")

    rng_scene = np.random.default_rng([int(seed), 101])
    target_label = len(obstacles) + 1
    target = None
    for _ in range(1000):
        ex = rng_scene.uniform(*spec.target_extent_xy)
        ey = rng_scene.uniform(*spec.target_extent_xy)
        ez = rng_scene.uniform(*spec.target_extent_z)
        cx = spec.target_center[0] + rng_scene.uniform(-spec.target_jitter_xy, spec.target_jitter_xy)
        cy = spec.target_center[1] + rng_scene.uniform(-spec.target_jitter_xy, spec.target_jitter_xy)
        yaw = spec.target_yaw + rng_scene.uniform(-spec.target_yaw_jitter, spec.target_yaw_jitter)
        candidate = Box(
            center=(cx, cy, ez / 2.0),
            extents=(ex, ey, ez),
            yaw=wrap_angle(yaw),
            color=_bright_color(rng_scene),
            segment_label=target_label,
        )
        if not _box_in_bounds(candidate, spec.bounds):
            continue
        if any(footprints_overlap(candidate, o) for o in obstacles):
            continue
        target = candidate
        break
    if target is None:
        raise PlacementFailure("no non-overlapping target placement in 1000 attempts")

    reference_poses = [
        _anchor_pose(spec.target_center, spec.target_yaw, c, spec.approach_distance)
        for c in spec.sector_centers()
    ]
    task_reference = _anchor_pose(
        spec.target_center, spec.target_yaw, 0.0, spec.approach_distance
    )
    return Scene(
        bounds=spec.bounds,
        floor=floor,
        obstacles=obstacles,
        target=target,
        seed=int(seed),
        layout_id=int(spec.layout_id),
        name=spec.name,
        reference_poses=reference_poses,
        task_reference=task_reference,
    )


def collides(scene: Scene, pose: Pose, footprint_radius: float) -> bool:
    """True iff a disc of the given radius at the pose position hits any
    solid box footprint or leaves the scene bounds. Grazing contact at
    exactly the radius does not collide."""
    if footprint_radius <= 0:
        raise ValueError("footprint_radius must be positive")
    xmin, xmax, ymin, ymax = scene.bounds
    if (
        pose.x - footprint_radius < xmin or pose.x + footprint_radius > xmax
        or pose.y - footprint_radius < ymin or pose.y + footprint_radius > ymax
    ):
        return True
    xy = (pose.x, pose.y)
    return any(box.footprint_distance(xy) < footprint_radius for box in scene.solid_boxes())


def target_visible(scene: Scene, rendered: PointCloud, min_points: int) -> bool:
    """True iff at least min_points rendered points carry the target label."""
    return int((rendered.labels == scene.target.segment_label).sum()) >= min_points


def _pose_to_dict(p: Pose) -> dict:
    d = {"x": p.x, "y": p.y, "theta": p.theta}
    if p.h is not None:
        d["h"] = p.h
    return d


def _pose_from_dict(d: dict) -> Pose:
    return Pose(d["x"], d["y"], d["theta"], d.get("h"))


def _box_to_dict(b: Box) -> dict:
    return {
        "center": list(b.center),
        "extents": list(b.extents),
        "yaw": b.yaw,
        "color": list(b.color),
        "segment_label": b.segment_label,
    }


def _box_from_dict(d: dict) -> Box:
    return Box(
        tuple(d["center"]), tuple(d["extents"]), d["yaw"],
        tuple(d["color"]), int(d["segment_label"]),
    )


def scene_to_record(scene: Scene) -> dict:
    return {
        "format_version": SCENE_FORMAT_VERSION,
        "kind": "scene",
        "name": scene.name,
        "seed": scene.seed,
        "layout_id": scene.layout_id,
        "bounds": list(scene.bounds),
        "floor": _box_to_dict(scene.floor),
        "obstacles": [_box_to_dict(b) for b in scene.obstacles],
        "target": _box_to_dict(scene.target),
        "reference_poses": [_pose_to_dict(p) for p in scene.reference_poses],
        "task_reference": _pose_to_dict(scene.task_reference),
    }


def scene_from_record(record: dict) -> Scene:
    if record.get("format_version") != SCENE_FORMAT_VERSION or record.get("kind") != "scene":
        raise FormatVersionMismatch("unrecognized scene record")
    return Scene(
        bounds=tuple(record["bounds"]),
        floor=_box_from_dict(record["floor"]),
        obstacles=[_box_from_dict(b) for b in record["obstacles"]],
        target=_box_from_dict(record["target"]),
        seed=int(record["seed"]),
        layout_id=int(record["layout_id"]),
        name=record["name"],
        reference_poses=[_pose_from_dict(p) for p in record["reference_poses"]],
        task_reference=_pose_from_dict(record["task_reference"]),
    )


def save_scene(path, scene: Scene) -> None:
    try:
        Path(path).write_text(json.dumps(scene_to_record(scene), indent=2, sort_keys=True))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_scene(path) -> Scene:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return scene_from_record(json.loads(text))
