import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from basepose.cloud import (
    PointCloud,
    concat_clouds,
    load_ply,
    save_ply,
    stitch,
    voxel_dedup,
)
from basepose.errors import EmptyInput, FormatVersionMismatch
from basepose.geometry import Pose, points_world_to_body


def random_cloud(rng, n):
    return PointCloud(
        rng.uniform(-2, 2, (n, 3)),
        rng.uniform(0, 1, (n, 3)).astype(np.float32),
        rng.integers(0, 5, n).astype(np.int32),
    )


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.full((2, 3), 1.5), np.zeros(2))


def test_ply_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    cloud = random_cloud(rng, 257)
    meta = {"seed": 7, "config": {"density": 400}}
    save_ply(tmp_path / "c.ply", cloud, meta=meta)
    loaded, loaded_meta = load_ply(tmp_path / "c.ply")
    assert loaded_meta == meta
    assert loaded.positions.tobytes() == cloud.positions.tobytes()
    assert loaded.colors.tobytes() == cloud.colors.tobytes()
    assert loaded.labels.tobytes() == cloud.labels.tobytes()


def test_ply_empty_round_trip(tmp_path):
    save_ply(tmp_path / "e.ply", PointCloud.empty())
    loaded, _ = load_ply(tmp_path / "e.ply")
    assert len(loaded) == 0


def test_ply_rejects_wrong_magic(tmp_path):
    (tmp_path / "bad.ply").write_bytes(b"plyx\nnot a real header\n")
    with pytest.raises(FormatVersionMismatch):
        load_ply(tmp_path / "bad.ply")


def test_voxel_dedup_removes_duplicates():
    rng = np.random.default_rng(1)
    base = random_cloud(rng, 400)
    doubled = concat_clouds([base, base])
    out_single = voxel_dedup(base, 0.05)
    out_double = voxel_dedup(doubled, 0.05)
    assert len(out_double) == len(out_single)
    assert len(out_single) <= len(base)


def test_voxel_dedup_min_spacing():
    rng = np.random.default_rng(2)
    cloud = random_cloud(rng, 3000)
    voxel = 0.2
    out = voxel_dedup(cloud, voxel)
    dists, _ = cKDTree(out.positions).query(out.positions, k=2)
    assert dists[:, 1].min() >= voxel / 2


def test_voxel_dedup_output_is_subset():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 500)
    out = voxel_dedup(cloud, 0.1)
    source = {tuple(p) for p in cloud.positions}
    assert all(tuple(p) in source for p in out.positions)


def test_stitch_single_frame_matches_transform():
    rng = np.random.default_rng(4)
    world = random_cloud(rng, 300)
    pose = Pose(0.5, -0.2, 0.8)
    body = PointCloud(points_world_to_body(world.positions, pose), world.colors, world.labels)
    voxel = 1e-6  # fine enough that nothing merges
    out = stitch([(body, pose)], voxel)
    assert out.voxel_size == voxel
    assert len(out.cloud) == len(world)
    assert np.allclose(np.sort(out.cloud.positions, axis=0),
                       np.sort(world.positions, axis=0), atol=1e-9)


def test_stitch_identical_frames_fully_dedup():
    rng = np.random.default_rng(5)
    world = random_cloud(rng, 200)
    pose_a = Pose(0.0, 0.0, 0.3)
    pose_b = Pose(1.0, 0.5, -0.7)
    frame_a = PointCloud(points_world_to_body(world.positions, pose_a), world.colors, world.labels)
    frame_b = PointCloud(points_world_to_body(world.positions, pose_b), world.colors, world.labels)
    single = stitch([(frame_a, pose_a)], 0.05)
    double = stitch([(frame_a, pose_a), (frame_b, pose_b)], 0.05)
    assert len(double.cloud) == len(single.cloud)


def test_stitch_disjoint_frames_add_up():
    rng = np.random.default_rng(6)
    near = random_cloud(rng, 300)
    far = PointCloud(near.positions + 100.0, near.colors, near.labels)
    pose = Pose(0, 0, 0)
    voxel = 0.05
    separate = len(voxel_dedup(near, voxel)) + len(voxel_dedup(far, voxel))
    together = stitch([(near, pose), (far, pose)], voxel)
    assert len(together.cloud) == separate


def test_stitch_point_count_bounded_and_near_inputs():
    from basepose.geometry import points_body_to_world

    rng = np.random.default_rng(7)
    frames = []
    total = 0
    for i in range(3):
        c = random_cloud(rng, 250)
        frames.append((c, Pose(0.1 * i, -0.2 * i, 0.3 * i)))
        total += len(c)
    voxel = 0.08
    out = stitch(frames, voxel)
    assert len(out.cloud) <= total
    transformed = np.concatenate(
        [points_body_to_world(c.positions, p) for c, p in frames]
    )
    dists, _ = cKDTree(transformed).query(out.cloud.positions, k=1)
    assert dists.max() <= voxel


def test_stitch_empty_input():
    with pytest.raises(EmptyInput):
        stitch([], 0.05)
