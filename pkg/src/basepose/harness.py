"""Desk-scale experimental protocol: an analytic manipulation-success
oracle, the three pose-randomization criteria, rollout collection, the
evaluation conditions, and the full experiment grid.

The oracle is a geometric stand-in for executing a manipulation policy:
success means standing inside a distance band from the target, facing it
within a bearing tolerance, approaching from an allowed sector, and (for
4-D poses) holding the torso inside a height band. Its geometry is
calibrated so the naive reachability baseline lands in the low tens of
percent, which makes the gap to the learned condition observable without
reproducing any hardware-specific numbers.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import (
    AugmentConfig,
    RawEntry,
    TrainSample,
    augment_entry,
)
from .errors import BudgetExhausted, RegionEmpty, SelectionExhausted
from .geometry import (
    CameraIntrinsics,
    CameraMount,
    DEFAULT_INTRINSICS,
    DEFAULT_MOUNT,
    Pose,
    wrap_angle,
)
from .cloud import stitch
from .model import ModelParams
from .render import render, sample_scene_frames, surface_sample
from .reporting import wilson_interval
from .scene import Scene, SceneSpec, collides, generate_scene, target_visible
from .transition import SelectionConfig, run_transition

CONDITION_REACHABILITY = "reachability"
CONDITION_ORACLE = "oracle"
CONDITION_MODEL = "model"
CONDITIONS = (CONDITION_REACHABILITY, CONDITION_ORACLE, CONDITION_MODEL)


def derive_seed(*parts) -> int:
    """Counter-based child seed; stable across platforms and runs."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class OracleSpec:
    """Analytic success region around the target.

    ``sides`` mirrors the scene convention: 1 keeps a single approach
    sector in front of the target, 2 keeps the two mirror sectors left and
    right of its facing axis. The height band applies only to 4-D poses.
    """

    distance_band: tuple[float, float] = (0.3, 0.7)
    bearing_tolerance: float = math.radians(20.0)
    sector_halfwidth: float = math.radians(80.0)
    sides: int = 1
    height_tolerance: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.distance_band[0] < self.distance_band[1]):
            raise ValueError("require 0 <= r_lo < r_hi")
        if not (0.0 < self.bearing_tolerance < math.pi):
            raise ValueError("bearing tolerance must lie in (0, pi)")
        if self.sides not in (1, 2):
            raise ValueError("sides must be 1 or 2")

    def sector_centers(self) -> list[float]:
        if self.sides == 1:
            return [0.0]
        return [math.pi / 2.0, -math.pi / 2.0]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OracleSpec":
        kwargs = dict(d)
        if "distance_band" in kwargs:
            kwargs["distance_band"] = tuple(kwargs["distance_band"])
        return cls(**kwargs)


def target_height_for(scene: Scene) -> float:
    """Preferred torso height for a scene: track the target's top face."""
    return float(np.clip(scene.target.top - 0.25, 0.0, 0.8))


def oracle_success(scene: Scene, pose: Pose, spec: OracleSpec) -> bool:
    """Deterministic success judgment for one pose in the scene frame."""
    tx, ty = scene.target.center[0], scene.target.center[1]
    dx, dy = pose.x - tx, pose.y - ty
    dist = math.hypot(dx, dy)
    if not (spec.distance_band[0] <= dist <= spec.distance_band[1]):
        return False
    bearing = math.atan2(ty - pose.y, tx - pose.x)
    if abs(wrap_angle(bearing - pose.theta)) > spec.bearing_tolerance:
        return False
    approach = wrap_angle(math.atan2(dy, dx) - scene.target.yaw)
    if min(abs(wrap_angle(approach - c)) for c in spec.sector_centers()) > spec.sector_halfwidth:
        return False
    if pose.h is not None:
        if abs(pose.h - target_height_for(scene)) > spec.height_tolerance:
            return False
    return True


KIND_DATA_COLLECTION = "data-collection"
KIND_REACHABILITY = "reachability"
KIND_TASK_AREA = "task-area"


@dataclass(frozen=True)
class RandomizationSpec:
    """Geometric recipe for one of the three pose-randomization criteria.

    data-collection: uniform in a 0.4 x 0.4 m square about a reference
    pose with +-15 deg headings. reachability: uniform on the intersection
    of a 1 x 1 m square about the reference pose and a 1 m disc about the
    target, +-30 deg. task-area: uniform in a 2 x 2 m square about the
    task anchor, +-30 deg, rejected until collision-free and the target is
    visible.
    """

    kind: str
    square_half: float
    heading_halfwidth: float
    reach_radius: float = 1.0
    require_collision_free: bool = False
    require_visibility: bool = False
    footprint_radius: float = 0.3
    min_visible_points: int = 20
    torso_range: tuple[float, float] | None = None
    max_attempts: int = 1000

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["torso_range"] is not None:
            d["torso_range"] = list(d["torso_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationSpec":
        kwargs = dict(d)
        if kwargs.get("torso_range") is not None:
            kwargs["torso_range"] = tuple(kwargs["torso_range"])
        return cls(**kwargs)


def data_collection_spec(torso_range=None) -> RandomizationSpec:
    return RandomizationSpec(
        kind=KIND_DATA_COLLECTION, square_half=0.2,
        heading_halfwidth=math.radians(15.0), torso_range=torso_range,
    )


def reachability_spec(torso_range=None) -> RandomizationSpec:
    return RandomizationSpec(
        kind=KIND_REACHABILITY, square_half=0.5,
        heading_halfwidth=math.radians(30.0), reach_radius=1.0,
        torso_range=torso_range,
    )


def task_area_spec(torso_range=None) -> RandomizationSpec:
    return RandomizationSpec(
        kind=KIND_TASK_AREA, square_half=1.0,
        heading_halfwidth=math.radians(30.0),
        require_collision_free=True, require_visibility=True,
        torso_range=torso_range,
    )


def sample_pose(spec: RandomizationSpec, scene: Scene, seed,
                side_index: int | None = None,
                intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                mount: CameraMount = DEFAULT_MOUNT,
                source=None) -> Pose:
    """Draw one pose under the given randomization criterion.

    ``side_index`` picks the reference pose for multi-sided tasks (defaults
    to a uniform choice). Raises RegionEmpty when no acceptable sample is
    found within the attempt budget.
    """
    rng = np.random.default_rng(seed)
    if spec.kind == KIND_TASK_AREA:
        anchor = scene.task_reference
    else:
        refs = scene.reference_poses
        if side_index is None:
            side_index = int(rng.integers(len(refs))) if len(refs) > 1 else 0
        anchor = refs[side_index % len(refs)]

    if spec.require_visibility and source is None:
        source = surface_sample(scene)
    tx, ty = scene.target.center[0], scene.target.center[1]

    for _ in range(spec.max_attempts):
        x = anchor.x + rng.uniform(-spec.square_half, spec.square_half)
        y = anchor.y + rng.uniform(-spec.square_half, spec.square_half)
        theta = anchor.theta + rng.uniform(-spec.heading_halfwidth, spec.heading_halfwidth)
        h = None
        if spec.torso_range is not None:
            h = rng.uniform(*spec.torso_range)
        pose = Pose(x, y, theta, h)
        if spec.kind == KIND_REACHABILITY:
            if math.hypot(x - tx, y - ty) > spec.reach_radius:
                continue
        if spec.require_collision_free and collides(scene, pose, spec.footprint_radius):
            continue
        if spec.require_visibility:
            view = render(source, pose, intr, mount)
            if not target_visible(scene, view, spec.min_visible_points):
                continue
        return pose
    raise RegionEmpty(
        f"{spec.kind}: no acceptable pose in {spec.max_attempts} attempts"
    )


@dataclass
class RolloutResult:
    """Raw dataset plus the scenes it was collected in."""

    entries: list[RawEntry]
    scenes: dict[int, Scene]
    attempts: int


def collect_rollouts(scene_generator, oracle: OracleSpec, spec: RandomizationSpec,
                     n_success: int, seed: int,
                     max_attempts: int | None = None,
                     n_frames: int = 4,
                     voxel_size: float = 0.02,
                     footprint_radius: float = 0.3,
                     intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                     mount: CameraMount = DEFAULT_MOUNT) -> RolloutResult:
    """Loop scene resets and candidate poses until n_success rollouts pass
    the oracle; each success is recorded with a stitched reconstruction.

    ``scene_generator`` maps an attempt index to a fresh Scene. Successful
    poses must also be collision-free so the recorded labels are reachable.
    For multi-sided tasks, successive successes alternate reference sides.
    """
    if n_success < 1:
        raise ValueError("n_success must be >= 1")
    if max_attempts is None:
        max_attempts = 50 * n_success
    entries: list[RawEntry] = []
    scenes: dict[int, Scene] = {}
    attempts = 0
    for attempt in range(max_attempts):
        attempts += 1
        scene = scene_generator(attempt)
        side = len(entries) % max(1, len(scene.reference_poses))
        pose = sample_pose(
            spec, scene, seed=[derive_seed(seed, attempt, 23)], side_index=side,
            intr=intr, mount=mount,
        )
        if not oracle_success(scene, pose, oracle):
            continue
        if collides(scene, pose, footprint_radius):
            continue
        frames = sample_scene_frames(
            scene, n_frames, intr=intr, mount=mount,
            seed=derive_seed(seed, attempt, 29),
        )
        entries.append(RawEntry(scene_id=attempt, stitched=stitch(frames, voxel_size),
                                label_pose=pose))
        scenes[attempt] = scene
        if len(entries) == n_success:
            return RolloutResult(entries=entries, scenes=scenes, attempts=attempts)
    raise BudgetExhausted(
        f"collected {len(entries)}/{n_success} successes in {max_attempts} attempts"
    )


def augment_rollouts(result: RolloutResult, cfg: AugmentConfig, seed: int,
                     intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                     mount: CameraMount = DEFAULT_MOUNT) -> list[TrainSample]:
    """Viewpoint-augment every collected entry against its own scene."""
    samples: list[TrainSample] = []
    for entry in result.entries:
        samples.extend(
            augment_entry(entry, result.scenes[entry.scene_id], cfg,
                          seed=derive_seed(seed, entry.scene_id, 41),
                          intr=intr, mount=mount)
        )
    return samples


@dataclass
class TrialRecord:
    index: int
    seed: int
    condition: str
    success: bool
    rejections: int
    scene_seed: int
    nav_pose: list | None = None
    chosen_pose: list | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    """Aggregate of one evaluation condition over independent trials."""

    condition: str
    n_trials: int
    successes: int
    success_rate: float
    wilson_low: float
    wilson_high: float
    master_seed: int
    config: dict
    trials: list[TrialRecord] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def to_dict(self, include_wall_clock: bool = False) -> dict:
        d = {
            "condition": self.condition,
            "n_trials": self.n_trials,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "wilson_low": self.wilson_low,
            "wilson_high": self.wilson_high,
            "master_seed": self.master_seed,
            "config": self.config,
            "trials": [t.to_dict() for t in self.trials],
        }
        # Wall clock is volatile and excluded from the reproducibility
        # contract; callers that want it persist it separately.
        if include_wall_clock:
            d["wall_clock_s"] = self.wall_clock_s
        return d


def _pose_list(p: Pose) -> list:
    return [round(v, 12) for v in p.as_array().tolist()]


def run_condition(condition: str, n_trials: int, seed: int,
                  scene_spec: SceneSpec, oracle: OracleSpec,
                  params: ModelParams | None = None,
                  selection: SelectionConfig = SelectionConfig(),
                  torso_range=None,
                  intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                  mount: CameraMount = DEFAULT_MOUNT,
                  scene_seed_tag: int = 31,
                  used_scene_seeds: set | None = None) -> ExperimentReport:
    """Evaluate one condition, one fresh scene per trial.

    reachability samples from the reachability criterion; oracle stands at
    the fixed reference pose; model observes from a task-area pose, runs
    the full transition, and is judged at the chosen pose. Selection
    exhaustion counts as failure rather than aborting the run.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    if condition == CONDITION_MODEL and params is None:
        raise ValueError("model condition requires trained parameters")
    t0 = time.perf_counter()
    trials: list[TrialRecord] = []
    successes = 0
    reach = reachability_spec(torso_range)
    task = task_area_spec(torso_range)
    for i in range(n_trials):
        scene_seed = derive_seed(seed, scene_seed_tag, i)
        if used_scene_seeds is not None:
            used_scene_seeds.add(scene_seed)
        scene = generate_scene(scene_spec, scene_seed)
        trial_seed = derive_seed(seed, 37, i)
        rejections = 0
        nav_pose = None
        chosen = None
        if condition == CONDITION_ORACLE:
            pose = scene.reference_poses[0]
            if torso_range is not None:
                pose = Pose(pose.x, pose.y, pose.theta, target_height_for(scene))
            success = oracle_success(scene, pose, oracle)
            chosen = pose
        elif condition == CONDITION_REACHABILITY:
            pose = sample_pose(reach, scene, seed=[trial_seed], side_index=0,
                               intr=intr, mount=mount)
            success = oracle_success(scene, pose, oracle)
            chosen = pose
        else:
            source = surface_sample(scene)
            nav_pose = sample_pose(task, scene, seed=[trial_seed], intr=intr,
                                   mount=mount, source=source)
            try:
                chosen, _, _ = run_transition(
                    scene, params, nav_pose, selection=selection,
                    seed=derive_seed(seed, 43, i), intr=intr, mount=mount,
                    source=source,
                )
                success = oracle_success(scene, chosen, oracle)
            except SelectionExhausted:
                success = False
                rejections = selection.max_tries
                chosen = None
        successes += int(success)
        trials.append(
            TrialRecord(
                index=i, seed=trial_seed, condition=condition,
                success=bool(success), rejections=rejections,
                scene_seed=scene_seed,
                nav_pose=_pose_list(nav_pose) if nav_pose else None,
                chosen_pose=_pose_list(chosen) if chosen else None,
            )
        )
    lo, hi = wilson_interval(successes, n_trials)
    return ExperimentReport(
        condition=condition,
        n_trials=n_trials,
        successes=successes,
        success_rate=successes / n_trials,
        wilson_low=lo,
        wilson_high=hi,
        master_seed=seed,
        config={
            "scene_spec": scene_spec.to_dict(),
            "oracle": oracle.to_dict(),
            "selection": {
                "max_tries": selection.max_tries,
                "footprint_radius": selection.footprint_radius,
                "strategy": selection.strategy,
            },
        },
        trials=trials,
        wall_clock_s=time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class SuiteConfig:
    """Full experiment grid: baselines, a data-efficiency sweep, and
    generalization to held-out furniture layouts."""

    master_seed: int = 0
    n_trials: int = 300
    rollout_counts: tuple[int, ...] = (5, 10, 20, 50)
    generalization_train_layouts: tuple[int, ...] = (0, 1, 2)
    generalization_eval_layouts: tuple[int, ...] = (3, 4)
    rollouts_per_layout: int = 10
    do_efficiency: bool = True
    do_generalization: bool = True
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        kwargs = dict(d)
        for key in ("rollout_counts", "generalization_train_layouts",
                    "generalization_eval_layouts"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class SuiteResult:
    reports: dict
    summary: list


def _offset_rollouts(result: RolloutResult, offset: int) -> RolloutResult:
    entries = [
        RawEntry(scene_id=e.scene_id + offset, stitched=e.stitched,
                 label_pose=e.label_pose)
        for e in result.entries
    ]
    scenes = {sid + offset: sc for sid, sc in result.scenes.items()}
    return RolloutResult(entries=entries, scenes=scenes, attempts=result.attempts)


def collect_and_train(scene_spec: SceneSpec, oracle: OracleSpec,
                      n_rollouts: int, seed: int,
                      augment_cfg: AugmentConfig,
                      model_cfg, train_cfg, loss_cfg,
                      layouts: tuple[int, ...] | None = None,
                      used_scene_seeds: set | None = None):
    """Collect rollouts (optionally across several layouts), augment, and
    train; returns (params, history, samples)."""
    from dataclasses import replace

    from .training import train

    layouts = layouts if layouts is not None else (scene_spec.layout_id,)
    per_layout = n_rollouts // len(layouts)
    counts = [per_layout] * len(layouts)
    counts[-1] += n_rollouts - per_layout * len(layouts)
    combined = RolloutResult(entries=[], scenes={}, attempts=0)
    collect_spec = data_collection_spec()
    for li, (layout, count) in enumerate(zip(layouts, counts)):
        if count == 0:
            continue
        spec_l = replace(scene_spec, layout_id=layout)

        def generator(attempt, _spec=spec_l, _li=li):
            scene_seed = derive_seed(seed, 11, _li, attempt)
            if used_scene_seeds is not None:
                used_scene_seeds.add(scene_seed)
            return generate_scene(_spec, scene_seed)

        part = collect_rollouts(generator, oracle, collect_spec, count,
                                seed=derive_seed(seed, 13, li))
        combined = RolloutResult(
            entries=combined.entries + _offset_rollouts(part, li * 100000).entries,
            scenes={**combined.scenes, **_offset_rollouts(part, li * 100000).scenes},
            attempts=combined.attempts + part.attempts,
        )
    samples = augment_rollouts(combined, augment_cfg, seed=derive_seed(seed, 17))
    params, history = train(samples, model_cfg, train_cfg, loss_cfg)
    return params, history, samples


def run_suite(config: SuiteConfig,
              scene_spec: SceneSpec | None = None,
              oracle: OracleSpec | None = None,
              augment_cfg: AugmentConfig | None = None,
              model_cfg=None, train_cfg=None, loss_cfg=None,
              selection: SelectionConfig = SelectionConfig()) -> SuiteResult:
    """Execute the configured grid and (when out_dir is set) write one
    report per cell plus a summary table and figures.

    Training scene seeds and evaluation scene seeds are tracked and
    asserted disjoint, so held-out evaluations never reuse training
    scenes.
    """
    from dataclasses import replace

    from .model import ModelConfig
    from .reporting import (
        data_efficiency_figure,
        save_report,
        success_figure,
        summary_rows,
        summary_table,
        write_summary_csv,
    )
    from .training import LossConfig, TrainConfig

    scene_spec = scene_spec or SceneSpec()
    oracle = oracle or OracleSpec(sides=scene_spec.sides)
    augment_cfg = augment_cfg or AugmentConfig()
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()

    seed = config.master_seed
    train_scene_seeds: set[int] = set()
    eval_scene_seeds: set[int] = set()
    reports: dict[str, ExperimentReport] = {}
    summary: list[dict] = []

    def evaluate(name: str, condition: str, eval_seed_tag: int, spec: SceneSpec,
                 params=None, extra: dict | None = None):
        report = run_condition(
            condition, config.n_trials, derive_seed(seed, eval_seed_tag),
            spec, oracle, params=params, selection=selection,
            used_scene_seeds=eval_scene_seeds,
        )
        reports[name] = report
        summary.extend(summary_rows([report], extra={"cell": name, **(extra or {})}))
        return report

    reach_report = evaluate("baseline/reachability", CONDITION_REACHABILITY, 301, scene_spec)
    oracle_report = evaluate("baseline/oracle", CONDITION_ORACLE, 302, scene_spec)

    efficiency_rates = []
    if config.do_efficiency:
        for count in config.rollout_counts:
            params, history, _ = collect_and_train(
                scene_spec, oracle, count, derive_seed(seed, 401, count),
                augment_cfg, model_cfg, train_cfg, loss_cfg,
                used_scene_seeds=train_scene_seeds,
            )
            report = evaluate(f"efficiency/{count}", CONDITION_MODEL,
                              500 + count, scene_spec, params=params,
                              extra={"rollouts": count})
            efficiency_rates.append(report.success_rate)

    if config.do_generalization:
        params, history, _ = collect_and_train(
            scene_spec, oracle,
            config.rollouts_per_layout * len(config.generalization_train_layouts),
            derive_seed(seed, 402), augment_cfg, model_cfg, train_cfg, loss_cfg,
            layouts=config.generalization_train_layouts,
            used_scene_seeds=train_scene_seeds,
        )
        for layout in config.generalization_eval_layouts:
            spec_l = replace(scene_spec, layout_id=layout)
            evaluate(f"generalization/layout{layout}/model", CONDITION_MODEL,
                     600 + layout, spec_l, params=params, extra={"layout": layout})
            evaluate(f"generalization/layout{layout}/reachability",
                     CONDITION_REACHABILITY, 650 + layout, spec_l,
                     extra={"layout": layout})

    overlap = train_scene_seeds & eval_scene_seeds
    if overlap:
        raise AssertionError(
            f"evaluation reused {len(overlap)} training scene seeds"
        )

    if config.out_dir is not None:
        from pathlib import Path

        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, report in reports.items():
            save_report(out / name, report)
        write_summary_csv(out / "summary.csv", summary)
        (out / "summary.txt").write_text(summary_table(summary))
        (out / "suite_config.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        success_figure(
            [reach_report, oracle_report]
            + [reports[k] for k in reports if k.startswith("efficiency/")],
            out / "success_rates.png",
            title="Success rate by condition",
        )
        if config.do_efficiency and efficiency_rates:
            data_efficiency_figure(
                list(config.rollout_counts), efficiency_rates,
                out / "data_efficiency.png",
                baselines={
                    "reachability": reach_report.success_rate,
                    "oracle": oracle_report.success_rate,
                },
            )
    return SuiteResult(reports=reports, summary=summary)
