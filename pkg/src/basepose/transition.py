"""The deployed step: observe at the navigation end pose, predict the pose
mixture, select a collision-free pose, and plan the differential-drive
transition.

The planner is deliberately collision-unaware (rotate to bearing, drive
straight, rotate to the final heading, adjust height); collision safety
lives entirely in the selection predicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .dataset import resample_to_n
from .errors import SelectionExhausted
from .geometry import (
    CameraIntrinsics,
    CameraMount,
    DEFAULT_INTRINSICS,
    DEFAULT_MOUNT,
    Pose,
    ego_to_world,
    wrap_angle,
)
from .gmm import GmmParams, gmm_sample
from .model import ModelParams, forward
from .render import render
from .scene import Scene, collides

ANGLE_EPS = 1e-12


@dataclass(frozen=True)
class SelectionConfig:
    """Rejection-sampling budget and footprint for pose selection.

    strategy 'sample' draws from the mixture until the predicate accepts;
    'mode-mean' first tries the mean of the highest-weight component, then
    falls back to sampling for the remaining tries.
    """

    max_tries: int = 100
    footprint_radius: float = 0.3
    strategy: str = "sample"

    def __post_init__(self):
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")
        if self.strategy not in ("sample", "mode-mean"):
            raise ValueError("strategy must be 'sample' or 'mode-mean'")


@dataclass(frozen=True)
class Segment:
    """One motion primitive: 'rotate' (radians), 'drive' (meters), or
    'height' (meters of torso travel)."""

    kind: str
    amount: float


@dataclass
class TransitionPlan:
    waypoints: list[Pose]
    segments: list[Segment]

    @property
    def drive_distance(self) -> float:
        return sum(s.amount for s in self.segments if s.kind == "drive")


def predict(params: ModelParams, observation: PointCloud) -> GmmParams:
    """Single forward pass; consults nothing but (params, observation)."""
    gmm, _ = forward(params, observation)
    return gmm


def select_pose(gmm: GmmParams, collision, cfg: SelectionConfig, seed) -> Pose:
    """Draw poses from the mixture until one is collision-free.

    ``collision`` is a predicate over Pose returning True on collision.
    Raises SelectionExhausted after cfg.max_tries rejected candidates.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(cfg.max_tries):
        if cfg.strategy == "mode-mean" and attempt == 0:
            best = int(np.argmax(gmm.weights))
            vec = gmm.means[best].copy()
            vec[2] = wrap_angle(vec[2])
            if gmm.dim == 4 and vec[3] < 0.0:
                vec[3] = 0.0
            candidate = Pose.from_array(vec)
        else:
            candidate = gmm_sample(gmm, rng)
        if not collision(candidate):
            return candidate
    raise SelectionExhausted(f"no collision-free pose in {cfg.max_tries} draws")


def _step_pose(p: Pose, seg: Segment) -> Pose:
    if seg.kind == "rotate":
        return Pose(p.x, p.y, p.theta + seg.amount, p.h)
    if seg.kind == "drive":
        return Pose(
            p.x + seg.amount * math.cos(p.theta),
            p.y + seg.amount * math.sin(p.theta),
            p.theta,
            p.h,
        )
    if seg.kind == "height":
        return Pose(p.x, p.y, p.theta, (p.h or 0.0) + seg.amount)
    raise ValueError(f"unknown segment kind {seg.kind!r}")


def plan_transition(start: Pose, goal: Pose) -> TransitionPlan:
    """Rotate to the goal bearing, drive straight, rotate to the goal
    heading, then adjust torso height when both poses carry one.

    Zero-length segments are omitted; executing the segments from the
    start reproduces the goal exactly.
    """
    segments: list[Segment] = []
    dx, dy = goal.x - start.x, goal.y - start.y
    distance = math.hypot(dx, dy)
    heading = start.theta
    if distance > 0.0:
        bearing = math.atan2(dy, dx)
        turn = wrap_angle(bearing - heading)
        if abs(turn) > ANGLE_EPS:
            segments.append(Segment("rotate", turn))
        segments.append(Segment("drive", distance))
        heading = bearing
    final_turn = wrap_angle(goal.theta - heading)
    if abs(final_turn) > ANGLE_EPS:
        segments.append(Segment("rotate", final_turn))

    start_h = start.h
    if goal.h is not None:
        if start_h is None:
            start_h = 0.0
        if goal.h != start_h:
            segments.append(Segment("height", goal.h - start_h))

    waypoints = [Pose(start.x, start.y, start.theta, start_h)]
    for seg in segments:
        waypoints.append(_step_pose(waypoints[-1], seg))
    return TransitionPlan(waypoints=waypoints, segments=segments)


def run_transition(scene: Scene, params: ModelParams, nav_end_pose: Pose,
                   selection: SelectionConfig = SelectionConfig(),
                   seed: int = 0,
                   intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                   mount: CameraMount = DEFAULT_MOUNT,
                   source=None):
    """Observe at the navigation end pose, predict, select, and plan.

    Returns (chosen world pose, TransitionPlan, observation). The chosen
    pose is selected in the ego frame against a world-frame collision
    predicate, so the returned pose is collision-free in the scene.
    """
    view = render(source if source is not None else scene, nav_end_pose, intr, mount)
    observation = resample_to_n(view, params.config.n_points, seed=int(seed))
    gmm = predict(params, observation)

    def hits(p_ego: Pose) -> bool:
        return collides(scene, ego_to_world(p_ego, nav_end_pose), selection.footprint_radius)

    chosen_ego = select_pose(gmm, hits, selection, seed=[int(seed), 71])
    chosen_world = ego_to_world(chosen_ego, nav_end_pose)
    plan = plan_transition(nav_end_pose, chosen_world)
    return chosen_world, plan, observation
