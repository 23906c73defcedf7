import numpy as np
import pytest

from basepose.cloud import PointCloud
from basepose.errors import FormatVersionMismatch, InvalidConfig, WrongPointCount
from basepose.model import (
    ModelConfig,
    forward,
    init_model,
    load_checkpoint,
    raw_to_gmm,
    saliency,
    save_checkpoint,
)

TINY = ModelConfig(n_kernels=2, pose_dim=3, n_points=128,
                   point_widths=(8, 16, 24), head_widths=(16,), dtype="float64")


def make_cloud(rng, n, constant=False):
    if constant:
        pos = np.tile(np.array([0.5, -0.2, 0.3]), (n, 1))
        col = np.tile(np.array([0.9, 0.1, 0.1], dtype=np.float32), (n, 1))
    else:
        pos = rng.uniform(-2, 2, (n, 3))
        col = rng.uniform(0, 1, (n, 3)).astype(np.float32)
    return PointCloud(pos, col, np.zeros(n, dtype=np.int32))


def test_init_deterministic():
    a = init_model(TINY, seed=5)
    b = init_model(TINY, seed=5)
    for (na, ta), (nb, tb) in zip(a.tensors(), b.tensors()):
        assert na == nb
        assert ta.tobytes() == tb.tobytes()
    c = init_model(TINY, seed=6)
    assert any(ta.tobytes() != tc.tobytes()
               for (_, ta), (_, tc) in zip(a.tensors(), c.tensors()))


def test_init_weights_near_uniform():
    cfg = ModelConfig(n_kernels=3, pose_dim=3, n_points=128,
                      point_widths=(8, 16, 24), head_widths=(16,), dtype="float64")
    params = init_model(cfg, seed=0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        gmm, _ = forward(params, make_cloud(rng, 128))
        assert np.abs(gmm.weights - 1.0 / 3.0).max() < 0.05
        assert np.abs(gmm.means).max() < 0.2
        # near-unit covariance scale at init
        assert np.allclose(np.diagonal(gmm.chol, axis1=1, axis2=2), 1.0, atol=0.2)


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        ModelConfig(n_kernels=0)
    with pytest.raises(InvalidConfig):
        ModelConfig(pose_dim=5)
    with pytest.raises(InvalidConfig):
        ModelConfig(dtype="float16")


def test_forward_k1_weight_is_exactly_one():
    cfg = ModelConfig(n_kernels=1, pose_dim=3, n_points=64,
                      point_widths=(8, 16), head_widths=(8,), dtype="float64")
    params = init_model(cfg, seed=2)
    rng = np.random.default_rng(3)
    gmm, _ = forward(params, make_cloud(rng, 64))
    assert gmm.weights[0] == 1.0


def test_forward_permutation_invariance():
    params = init_model(TINY, seed=7)
    rng = np.random.default_rng(8)
    cloud = make_cloud(rng, 128)
    gmm_a, feats_a = forward(params, cloud)
    perm = rng.permutation(128)
    gmm_b, feats_b = forward(params, cloud.take(perm))
    assert np.allclose(gmm_a.weights, gmm_b.weights, atol=1e-9)
    assert np.allclose(gmm_a.means, gmm_b.means, atol=1e-9)
    assert np.allclose(gmm_a.chol, gmm_b.chol, atol=1e-9)
    assert np.allclose(feats_a.global_feature, feats_b.global_feature, atol=1e-9)


def test_forward_duplicated_cloud_same_global_feature():
    params = init_model(TINY, seed=9)
    rng = np.random.default_rng(10)
    half = make_cloud(rng, 64)
    doubled = PointCloud(
        np.concatenate([half.positions, half.positions]),
        np.concatenate([half.colors, half.colors]),
        np.concatenate([half.labels, half.labels]),
    )
    cfg64 = ModelConfig(n_kernels=2, pose_dim=3, n_points=64,
                        point_widths=(8, 16, 24), head_widths=(16,), dtype="float64")
    params64 = init_model(cfg64, seed=9)
    _, feats_half = forward(params64, half)
    cfg128 = ModelConfig(n_kernels=2, pose_dim=3, n_points=128,
                         point_widths=(8, 16, 24), head_widths=(16,), dtype="float64")
    params128 = init_model(cfg128, seed=9)
    _, feats_doubled = forward(params128, doubled)
    assert np.allclose(feats_half.global_feature, feats_doubled.global_feature, atol=1e-9)


def test_forward_invariants_hold_for_random_params():
    rng = np.random.default_rng(11)
    for trial in range(10):
        params = init_model(TINY, seed=trial)
        for _, t in params.tensors():
            t += 0.3 * rng.standard_normal(t.shape)
        gmm, feats = forward(params, make_cloud(rng, 128))
        assert abs(gmm.weights.sum() - 1.0) < 1e-9
        assert (gmm.weights >= 0).all()
        diag = np.diagonal(gmm.chol, axis1=1, axis2=2)
        assert (diag >= TINY.diag_floor).all()
        cov = gmm.covariances()
        for c in cov:
            assert (np.linalg.eigvalsh(c) > 0).all()
        assert np.allclose(feats.global_feature, feats.per_point.max(axis=0))


def test_wrong_point_count():
    params = init_model(TINY, seed=0)
    rng = np.random.default_rng(12)
    with pytest.raises(WrongPointCount):
        forward(params, make_cloud(rng, 127))


def test_raw_to_gmm_layout():
    cfg = ModelConfig(n_kernels=2, pose_dim=3, n_points=8,
                      point_widths=(4,), head_widths=(4,), dtype="float64")
    raw = np.zeros(cfg.raw_dim)
    raw[0:2] = [0.0, 0.0]
    raw[2:8] = [1, 2, 3, 4, 5, 6]
    gmm, _ = raw_to_gmm(raw, cfg)
    assert np.allclose(gmm.weights, [0.5, 0.5])
    assert np.allclose(gmm.means, [[1, 2, 3], [4, 5, 6]])


def test_saliency_constant_cloud():
    params = init_model(TINY, seed=1)
    rng = np.random.default_rng(13)
    scores = saliency(params, make_cloud(rng, 128, constant=True))
    assert np.allclose(scores, scores[0], atol=1e-12)
    assert (scores >= -1.0).all() and (scores <= 1.0).all()


def test_saliency_argmax_points_score_positive():
    # Strict positivity of every winner's cosine is not a theorem for an
    # untrained net (a winner can carry a negative won-coordinate when all
    # points are negative there), so assert it on a fixed fixture and the
    # statistical form across clouds.
    params = init_model(TINY, seed=1)
    rng = np.random.default_rng(0)
    cloud = make_cloud(rng, 128)
    _, feats = forward(params, cloud)
    scores = saliency(params, cloud)
    winners = feats.per_point.argmax(axis=0)
    assert (scores[winners] > 0).all()
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cloud = make_cloud(rng, 128)
        _, feats = forward(params, cloud)
        scores = saliency(params, cloud)
        winners = feats.per_point.argmax(axis=0)
        assert scores[winners].mean() > 0
        assert (scores[winners] > 0).mean() > 0.5


def test_checkpoint_round_trip(tmp_path):
    params = init_model(TINY, seed=4)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, training_seed=99)
    loaded, seed = load_checkpoint(path)
    assert seed == 99
    assert loaded.config == TINY
    for (na, ta), (nb, tb) in zip(params.tensors(), loaded.tensors()):
        assert na == nb and ta.tobytes() == tb.tobytes()
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, loaded, training_seed=99)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_wrong_magic(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(FormatVersionMismatch):
        load_checkpoint(bad)
