"""Learning preferable mobile-robot base poses from ego-centric RGB point
clouds: synthetic scenes, viewpoint-augmented data collection, a mixture
density network over poses, and a Monte-Carlo evaluation harness."""

from .cloud import PointCloud, StitchedCloud, load_ply, save_ply, stitch, voxel_dedup
from .dataset import (
    AugmentConfig,
    PoseRegion,
    RawEntry,
    TrainSample,
    apply_se2_jitter,
    augment_entry,
    resample_to_n,
    sample_viewpoints,
)
from .geometry import (
    CameraIntrinsics,
    CameraMount,
    Pose,
    Transform2D,
    compose,
    ego_to_world,
    invert,
    project,
    unproject,
    world_to_ego,
    wrap_angle,
)
from .gmm import GmmParams, gmm_log_prob, gmm_sample
from .harness import (
    ExperimentReport,
    OracleSpec,
    RandomizationSpec,
    SuiteConfig,
    collect_rollouts,
    oracle_success,
    run_condition,
    run_suite,
    sample_pose,
)
from .model import (
    EncoderFeatures,
    ModelConfig,
    ModelParams,
    forward,
    init_model,
    load_checkpoint,
    saliency,
    save_checkpoint,
)
from .render import render, sample_scene_frames, surface_sample
from .scene import Box, Scene, SceneSpec, collides, generate_scene, target_visible
from .training import (
    LossBreakdown,
    LossConfig,
    TrainConfig,
    entropy_of_weights,
    gradient,
    inter_mode_distance,
    loss,
    mode_entropy,
    train,
)
from .transition import (
    SelectionConfig,
    TransitionPlan,
    plan_transition,
    predict,
    run_transition,
    select_pose,
)

__version__ = "0.1.0"
