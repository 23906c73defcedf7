"""Dataset construction: viewpoint augmentation of collected (scene, pose)
pairs into ego-frame training samples, training-time jitter, fixed-size
resampling, and on-disk layout.

Layout written by the save functions:

    manifest.json                     format version, config, seeds, counts
    raw/<scene_id>/stitched.ply       scene-frame reconstruction
    raw/<scene_id>/label.json         preferable pose in the scene frame
    train/<sid>_<vid>.ply             ego observation (robot body frame)
    train/<sid>_<vid>.json            ego-frame label + viewpoint pose
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud, StitchedCloud, load_ply, save_ply
from .errors import (
    EmptyCloud,
    FormatVersionMismatch,
    IoFailure,
    NoValidViewpoint,
)
from .geometry import (
    CameraIntrinsics,
    CameraMount,
    DEFAULT_INTRINSICS,
    DEFAULT_MOUNT,
    Pose,
    Transform2D,
    world_to_ego,
)
from .render import render
from .scene import Scene, collides, target_visible

DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PoseRegion:
    """Uniform pose sampler: a square around an anchor pose with headings
    spread around the anchor heading."""

    center: Pose
    half_x: float
    half_y: float
    heading_halfwidth: float

    def sample(self, rng: np.random.Generator) -> Pose:
        return Pose(
            self.center.x + rng.uniform(-self.half_x, self.half_x),
            self.center.y + rng.uniform(-self.half_y, self.half_y),
            self.center.theta + rng.uniform(-self.heading_halfwidth, self.heading_halfwidth),
            self.center.h,
        )

    def contains_xy(self, x: float, y: float, tol: float = 1e-9) -> bool:
        return (
            abs(x - self.center.x) <= self.half_x + tol
            and abs(y - self.center.y) <= self.half_y + tol
        )


@dataclass(frozen=True)
class RawEntry:
    """One collected rollout success: reconstruction plus its label pose,
    both in the scene frame."""

    scene_id: int
    stitched: StitchedCloud
    label_pose: Pose


@dataclass(frozen=True)
class TrainSample:
    """Ego observation with the label re-expressed in the same body frame."""

    observation: PointCloud
    label: Pose
    source_scene_id: int
    viewpoint_id: int
    viewpoint: Pose


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for viewpoint augmentation and training-time jitter."""

    m_viewpoints: int = 32
    min_visible_points: int = 20
    footprint_radius: float = 0.3
    n_points: int = 8192
    jitter_max_translation: float = 1.0
    jitter_max_rotation: float = math.pi
    # Region half-extents / heading spread used when sampling viewpoints
    # around the scene's task reference pose.
    region_half_x: float = 1.0
    region_half_y: float = 1.0
    region_heading_halfwidth: float = math.pi / 6.0

    def __post_init__(self):
        if self.m_viewpoints < 1:
            raise ValueError("m_viewpoints must be >= 1")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.jitter_max_translation < 0:
            raise ValueError("jitter_max_translation must be >= 0")

    def region_for(self, scene: Scene) -> PoseRegion:
        return PoseRegion(
            scene.task_reference, self.region_half_x,
            self.region_half_y, self.region_heading_halfwidth,
        )

    def to_dict(self) -> dict:
        return {
            "m_viewpoints": self.m_viewpoints,
            "min_visible_points": self.min_visible_points,
            "footprint_radius": self.footprint_radius,
            "n_points": self.n_points,
            "jitter_max_translation": self.jitter_max_translation,
            "jitter_max_rotation": self.jitter_max_rotation,
            "region_half_x": self.region_half_x,
            "region_half_y": self.region_half_y,
            "region_heading_halfwidth": self.region_heading_halfwidth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**d)


def sample_viewpoints(scene: Scene, cfg: AugmentConfig, seed: int,
                      source=None,
                      intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                      mount: CameraMount = DEFAULT_MOUNT) -> list[Pose]:
    """Draw up to cfg.m_viewpoints poses uniformly from the task region,
    keeping those that are collision-free and see the target.

    Visibility is judged on a render of ``source`` (defaults to a surface
    sampling of the scene) so the filter matches what the viewpoint would
    actually observe.
    """
    region = cfg.region_for(scene)
    rng = np.random.default_rng([int(seed), 211])
    kept = []
    for _ in range(cfg.m_viewpoints):
        pose = region.sample(rng)
        if collides(scene, pose, cfg.footprint_radius):
            continue
        view = render(source if source is not None else scene, pose, intr, mount)
        if not target_visible(scene, view, cfg.min_visible_points):
            continue
        kept.append(pose)
    if not kept:
        raise NoValidViewpoint(
            f"all {cfg.m_viewpoints} viewpoint candidates failed the filters"
        )
    return kept


def resample_to_n(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Return exactly n points: a uniform subsample without replacement
    when the cloud is large enough, otherwise the full cloud padded by
    uniform resampling with replacement."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(cloud) == 0:
        raise EmptyCloud("cannot resample an empty cloud")
    rng = np.random.default_rng([int(seed), 3301])
    if len(cloud) >= n:
        idx = rng.choice(len(cloud), size=n, replace=False)
    else:
        pad = rng.choice(len(cloud), size=n - len(cloud), replace=True)
        idx = np.concatenate([np.arange(len(cloud)), pad])
    idx.sort()
    return cloud.take(idx)


def augment_entry(entry: RawEntry, scene: Scene, cfg: AugmentConfig, seed: int,
                  intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                  mount: CameraMount = DEFAULT_MOUNT) -> list[TrainSample]:
    """Render the entry's reconstruction from sampled viewpoints; every
    retained viewpoint yields one sample whose label is the entry label
    re-expressed in that viewpoint's body frame."""
    viewpoints = sample_viewpoints(scene, cfg, seed, source=entry.stitched,
                                   intr=intr, mount=mount)
    samples = []
    for vid, vp in enumerate(viewpoints):
        obs = render(entry.stitched, vp, intr, mount)
        obs = resample_to_n(obs, cfg.n_points, seed=int(np.random.default_rng(
            [int(seed), entry.scene_id, vid, 17]).integers(2**31)))
        samples.append(
            TrainSample(
                observation=obs,
                label=world_to_ego(entry.label_pose, vp),
                source_scene_id=entry.scene_id,
                viewpoint_id=vid,
                viewpoint=vp,
            )
        )
    return samples


def jitter_transform(cfg: AugmentConfig, seed: int) -> Transform2D:
    """The planar rigid jitter drawn for this (config, seed): rotation
    uniform within the configured bound, translation uniform in the disc."""
    rng = np.random.default_rng([int(seed), 9203])
    rot = rng.uniform(-cfg.jitter_max_rotation, cfg.jitter_max_rotation)
    radius = cfg.jitter_max_translation * math.sqrt(rng.uniform(0.0, 1.0))
    ang = rng.uniform(0.0, 2.0 * math.pi)
    return Transform2D(rot, (radius * math.cos(ang), radius * math.sin(ang)))


def transform_sample(sample: TrainSample, t: Transform2D) -> TrainSample:
    """Apply one planar rigid transform identically to the observation
    positions and the label; colors, labels, and h are untouched."""
    positions = sample.observation.positions.copy()
    positions[:, :2] = t.apply_xy(positions[:, :2])
    return TrainSample(
        observation=PointCloud(positions, sample.observation.colors, sample.observation.labels),
        label=t.apply_pose(sample.label),
        source_scene_id=sample.source_scene_id,
        viewpoint_id=sample.viewpoint_id,
        viewpoint=sample.viewpoint,
    )


def apply_se2_jitter(sample: TrainSample, cfg: AugmentConfig, seed: int) -> TrainSample:
    """Jitter one sample with the transform from :func:`jitter_transform`."""
    return transform_sample(sample, jitter_transform(cfg, seed))


def _pose_dict(p: Pose) -> dict:
    d = {"x": p.x, "y": p.y, "theta": p.theta}
    if p.h is not None:
        d["h"] = p.h
    return d


def _pose_undict(d: dict) -> Pose:
    return Pose(d["x"], d["y"], d["theta"], d.get("h"))


def _write_manifest(root: Path, kind: str, config: dict | None, seed: int | None,
                    counts: dict) -> None:
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": kind,
        "config": config or {},
        "seed": seed,
        "counts": counts,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _read_manifest(root: Path, kind: str) -> dict:
    path = root / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatVersionMismatch(f"{path}: not a manifest") from exc
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: format_version {manifest.get('format_version')} unsupported"
        )
    if manifest.get("kind") != kind:
        raise FormatVersionMismatch(
            f"{path}: expected {kind} dataset, found {manifest.get('kind')}"
        )
    return manifest


def save_raw_dataset(path, entries, scenes: dict | None = None,
                     config: dict | None = None, seed: int | None = None) -> None:
    """Write entries under raw/<scene_id>/; when the generating scenes are
    supplied they are stored alongside so augmentation can re-run its
    collision and visibility filters."""
    from .scene import save_scene

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = list(entries)
    for entry in entries:
        d = root / "raw" / str(entry.scene_id)
        d.mkdir(parents=True, exist_ok=True)
        save_ply(d / "stitched.ply", entry.stitched.cloud,
                 meta={"voxel_size": entry.stitched.voxel_size, "seed": seed})
        label = {
            "format_version": DATASET_FORMAT_VERSION,
            "kind": "raw-label",
            "scene_id": entry.scene_id,
            "frame": "scene",
            "pose": _pose_dict(entry.label_pose),
        }
        (d / "label.json").write_text(json.dumps(label, indent=2, sort_keys=True))
        if scenes is not None and entry.scene_id in scenes:
            save_scene(d / "scene.json", scenes[entry.scene_id])
    _write_manifest(root, "raw", config, seed, {"entries": len(entries)})


def load_raw_dataset(path):
    """Returns (entries, scenes) where scenes maps scene_id to Scene for
    every entry whose scene record was stored."""
    from .scene import load_scene

    root = Path(path)
    manifest = _read_manifest(root, "raw")
    entries = []
    scenes = {}
    raw_dir = root / "raw"
    ids = sorted(int(p.name) for p in raw_dir.iterdir()) if raw_dir.is_dir() else []
    for sid in ids:
        d = raw_dir / str(sid)
        cloud, meta = load_ply(d / "stitched.ply")
        label = json.loads((d / "label.json").read_text())
        if label.get("format_version") != DATASET_FORMAT_VERSION:
            raise FormatVersionMismatch(f"{d}/label.json: bad format version")
        entries.append(
            RawEntry(sid, StitchedCloud(cloud, float(meta["voxel_size"])),
                     _pose_undict(label["pose"]))
        )
        if (d / "scene.json").exists():
            scenes[sid] = load_scene(d / "scene.json")
    if len(entries) != manifest["counts"]["entries"]:
        raise IoFailure(f"{root}: manifest promises {manifest['counts']['entries']} "
                        f"entries, found {len(entries)}")
    return entries, scenes


def save_train_dataset(path, samples, config: dict | None = None,
                       seed: int | None = None) -> None:
    root = Path(path)
    (root / "train").mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    for s in samples:
        stem = f"{s.source_scene_id}_{s.viewpoint_id}"
        save_ply(root / "train" / f"{stem}.ply", s.observation,
                 meta={"scene_id": s.source_scene_id, "viewpoint_id": s.viewpoint_id})
        sidecar = {
            "format_version": DATASET_FORMAT_VERSION,
            "kind": "train-label",
            "scene_id": s.source_scene_id,
            "viewpoint_id": s.viewpoint_id,
            "frame": "body",
            "pose": _pose_dict(s.label),
            "viewpoint_pose": _pose_dict(s.viewpoint),
        }
        (root / "train" / f"{stem}.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True))
    _write_manifest(root, "train", config, seed, {"samples": len(samples)})


def load_train_dataset(path) -> list[TrainSample]:
    root = Path(path)
    manifest = _read_manifest(root, "train")
    train_dir = root / "train"
    stems = sorted(p.stem for p in train_dir.glob("*.ply")) if train_dir.is_dir() else []

    def sort_key(stem: str):
        sid, vid = stem.rsplit("_", 1)
        return int(sid), int(vid)

    samples = []
    for stem in sorted(stems, key=sort_key):
        cloud, _ = load_ply(train_dir / f"{stem}.ply")
        sidecar = json.loads((train_dir / f"{stem}.json").read_text())
        if sidecar.get("format_version") != DATASET_FORMAT_VERSION:
            raise FormatVersionMismatch(f"{stem}.json: bad format version")
        samples.append(
            TrainSample(
                observation=cloud,
                label=_pose_undict(sidecar["pose"]),
                source_scene_id=int(sidecar["scene_id"]),
                viewpoint_id=int(sidecar["viewpoint_id"]),
                viewpoint=_pose_undict(sidecar["viewpoint_pose"]),
            )
        )
    if len(samples) != manifest["counts"]["samples"]:
        raise IoFailure(f"{root}: manifest promises {manifest['counts']['samples']} "
                        f"samples, found {len(samples)}")
    return samples
