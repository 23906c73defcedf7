"""Regularized negative-log-likelihood objective, exact reverse-mode
gradients, the moment-based optimizer, and the training loop.

The objective over a batch is

    total = sum_i -log P_i(x_i)  - a_w * sum_i H_w,i
                                 - a_dist * sum_i D_i
                                 - a_mode * sum_i Hmode_i

where every regularizer is evaluated on the mixture predicted for that
sample. Gradients are hand-derived and propagated through the fixed
computation graph (density, parameter maps, head, max-pool, encoder); no
numerical differentiation is used outside the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import AugmentConfig, TrainSample, jitter_transform, transform_sample
from .errors import DimensionMismatch, EmptyDataset
from .gmm import GmmParams, LOG_2PI
from .model import (
    ModelConfig,
    ModelParams,
    backward_batch,
    forward_batch,
    init_model,
    raw_to_gmm,
    raw_to_gmm_backward,
)


@dataclass(frozen=True)
class LossConfig:
    """Regularizer coefficients; all must be finite and non-negative."""

    alpha_w: float = 0.01
    alpha_dist: float = 0.001
    alpha_mode: float = 0.001

    def __post_init__(self):
        for name in ("alpha_w", "alpha_dist", "alpha_mode"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


@dataclass
class LossBreakdown:
    """Batch sums of each objective term and their exact combination."""

    nll: float
    h_w: float
    d_inter: float
    h_mode: float
    total: float


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings."""

    batch_size: int = 4
    steps: int = 2000
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    eval_every: int = 100
    val_max_samples: int = 32
    jitter: bool = True
    jitter_max_translation: float = 1.0
    jitter_max_rotation: float = math.pi

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        frac = step / max(1, self.steps - 1)
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def entropy_of_weights(weights: np.ndarray) -> float:
    """H_w = -sum_i w_i log w_i; zero exactly for one-hot weights."""
    w = np.asarray(weights, dtype=np.float64)
    terms = np.where(w > 0.0, w * np.log(np.where(w > 0.0, w, 1.0)), 0.0)
    return float(-terms.sum())


def inter_mode_distance(means: np.ndarray, chol_factors: np.ndarray) -> float:
    """Sum over component pairs of the squared Mahalanobis separation of
    their means under the average covariance."""
    means = np.asarray(means, dtype=np.float64)
    k = len(means)
    if k < 2:
        return 0.0
    s_avg = np.einsum("kij,klj->il", chol_factors, chol_factors) / k
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            u = means[i] - means[j]
            total += float(u @ np.linalg.solve(s_avg, u))
    return total


def component_entropies(gmm: GmmParams) -> np.ndarray:
    d = gmm.dim
    logdet_half = np.log(np.diagonal(gmm.chol, axis1=1, axis2=2)).sum(axis=1)
    return 0.5 * d * (1.0 + LOG_2PI) + logdet_half


def mode_entropy(gmm: GmmParams) -> float:
    """Weighted sum of per-component Gaussian differential entropies."""
    return float(gmm.weights @ component_entropies(gmm))


def _batch_arrays(params: ModelParams, batch):
    cfg = params.config
    batch = list(batch)
    if not batch:
        raise EmptyDataset("loss requires a non-empty batch")
    positions = np.stack([s.observation.positions for s in batch])
    colors = np.stack([s.observation.colors for s in batch])
    labels = np.empty((len(batch), cfg.pose_dim), dtype=np.float64)
    for i, s in enumerate(batch):
        vec = s.label.as_array()
        if vec.shape != (cfg.pose_dim,):
            raise DimensionMismatch(
                f"label has dimension {vec.shape[0]}, model expects {cfg.pose_dim}"
            )
        labels[i] = vec
    return positions, colors, labels


def _per_sample_terms(gmm: GmmParams, x: np.ndarray):
    """Log density at x plus the quantities reused by the backward pass."""
    k, d = gmm.n_kernels, gmm.dim
    z = np.empty((k, d))
    lt_z = np.empty((k, d))
    comp_log = np.empty(k)
    for kk in range(k):
        l = gmm.chol[kk]
        zk = solve_triangular(l, x - gmm.means[kk], lower=True)
        z[kk] = zk
        lt_z[kk] = solve_triangular(l.T, zk, lower=False)
        comp_log[kk] = -0.5 * d * LOG_2PI - np.log(np.diag(l)).sum() - 0.5 * zk @ zk
    logw = np.log(gmm.weights)
    a = comp_log + logw
    m = a.max()
    logp = m + math.log(np.exp(a - m).sum())
    q = np.exp(comp_log - logp)
    return logp, q, z, lt_z


def _sample_loss_and_param_grads(gmm: GmmParams, x: np.ndarray, cfg: LossConfig):
    """Objective terms for one sample and the gradient of its contribution
    to the total w.r.t. (weights, means, chol)."""
    k, d = gmm.n_kernels, gmm.dim
    logp, q, z, lt_z = _per_sample_terms(gmm, x)
    r = gmm.weights * q

    d_w = -q.copy()
    d_means = np.empty((k, d))
    d_chol = np.empty((k, d, d))
    for kk in range(k):
        d_means[kk] = -r[kk] * lt_z[kk]
        d_log_n = np.outer(lt_z[kk], z[kk]) - np.diag(1.0 / np.diag(gmm.chol[kk]))
        d_chol[kk] = -r[kk] * np.tril(d_log_n)

    h_w = entropy_of_weights(gmm.weights)
    if cfg.alpha_w != 0.0:
        d_w += cfg.alpha_w * (np.log(gmm.weights) + 1.0)

    d_inter = 0.0
    if k >= 2:
        s_avg = np.einsum("kij,klj->il", gmm.chol, gmm.chol) / k
        s_inv = np.linalg.inv(s_avg)
        g_s = np.zeros((d, d))
        for i in range(k):
            for j in range(i + 1, k):
                u = gmm.means[i] - gmm.means[j]
                su = s_inv @ u
                d_inter += float(u @ su)
                if cfg.alpha_dist != 0.0:
                    d_means[i] += -cfg.alpha_dist * 2.0 * su
                    d_means[j] += cfg.alpha_dist * 2.0 * su
                    g_s -= np.outer(su, su)
        if cfg.alpha_dist != 0.0:
            for kk in range(k):
                d_chol[kk] += -cfg.alpha_dist * np.tril((2.0 / k) * g_s @ gmm.chol[kk])

    h_entropies = component_entropies(gmm)
    h_mode = float(gmm.weights @ h_entropies)
    if cfg.alpha_mode != 0.0:
        d_w += -cfg.alpha_mode * h_entropies
        for kk in range(k):
            diag = np.diag_indices(d)
            d_chol[kk][diag] += -cfg.alpha_mode * gmm.weights[kk] / gmm.chol[kk][diag]

    return -logp, h_w, d_inter, h_mode, d_w, d_means, d_chol


def loss(params: ModelParams, batch, cfg: LossConfig) -> LossBreakdown:
    """Objective over a batch; regularizers are per-sample and summed."""
    positions, colors, labels = _batch_arrays(params, batch)
    raw, _ = forward_batch(params, positions, colors)
    nll = h_w = d_inter = h_mode = 0.0
    zero = LossConfig(0.0, 0.0, 0.0)
    for i in range(len(labels)):
        gmm, _ = raw_to_gmm(raw[i], params.config)
        s_nll, s_hw, s_d, s_hm, *_ = _sample_loss_and_param_grads(gmm, labels[i], zero)
        nll += s_nll
        h_w += s_hw
        d_inter += s_d
        h_mode += s_hm
    total = nll - cfg.alpha_w * h_w - cfg.alpha_dist * d_inter - cfg.alpha_mode * h_mode
    return LossBreakdown(nll=nll, h_w=h_w, d_inter=d_inter, h_mode=h_mode, total=total)


def loss_and_gradient(params: ModelParams, batch, cfg: LossConfig):
    """Returns (LossBreakdown, gradient dict matching the model tensors)."""
    positions, colors, labels = _batch_arrays(params, batch)
    raw, cache = forward_batch(params, positions, colors)
    d_raw = np.empty_like(raw)
    nll = h_w = d_inter = h_mode = 0.0
    for i in range(len(labels)):
        gmm, map_cache = raw_to_gmm(raw[i], params.config)
        s_nll, s_hw, s_d, s_hm, d_w, d_means, d_chol = _sample_loss_and_param_grads(
            gmm, labels[i], cfg
        )
        nll += s_nll
        h_w += s_hw
        d_inter += s_d
        h_mode += s_hm
        d_raw[i] = raw_to_gmm_backward(params.config, map_cache, d_w, d_means, d_chol)
    total = nll - cfg.alpha_w * h_w - cfg.alpha_dist * d_inter - cfg.alpha_mode * h_mode
    breakdown = LossBreakdown(nll=nll, h_w=h_w, d_inter=d_inter, h_mode=h_mode, total=total)
    return breakdown, backward_batch(params, cache, d_raw)


def gradient(params: ModelParams, batch, cfg: LossConfig) -> dict[str, np.ndarray]:
    """Exact gradient of the batch total w.r.t. every model tensor."""
    return loss_and_gradient(params, batch, cfg)[1]


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, params: ModelParams):
        self.m = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.v = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray],
             cfg: TrainConfig, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for name, tensor in params.tensors():
            g = grads[name].astype(tensor.dtype)
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            tensor -= (lr / b1c) * m / (np.sqrt(v / b2c) + cfg.eps)


def split_by_scene(samples, val_fraction: float):
    """Hold out whole scenes (never individual viewpoints) for validation."""
    ids = sorted({s.source_scene_id for s in samples})
    n_val = int(round(val_fraction * len(ids))) if len(ids) > 1 else 0
    if val_fraction > 0 and len(ids) > 1:
        n_val = max(1, n_val)
    val_ids = set(ids[len(ids) - n_val:]) if n_val else set()
    train = [s for s in samples if s.source_scene_id not in val_ids]
    val = [s for s in samples if s.source_scene_id in val_ids]
    return train, val


def _mean_val_nll(params: ModelParams, val_batchable, batch_size: int,
                  cfg: LossConfig) -> float:
    total = 0.0
    for start in range(0, len(val_batchable), batch_size):
        chunk = val_batchable[start:start + batch_size]
        total += loss(params, chunk, LossConfig(0.0, 0.0, 0.0)).nll
    return total / len(val_batchable)


def train(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
          loss_cfg: LossConfig):
    """Minimize the regularized objective with moment-based adaptive
    gradient descent; returns (best params by validation NLL, history).

    History has one record per step with the LossBreakdown fields and,
    on evaluation steps, the validation NLL.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDataset("training requires a non-empty dataset")
    train_set, val_set = split_by_scene(samples, train_cfg.val_fraction)
    if not train_set:
        train_set, val_set = samples, []
    val_subset = val_set[: train_cfg.val_max_samples]

    params = init_model(model_cfg, train_cfg.seed)
    adam = AdamState(params)
    jcfg = AugmentConfig(
        n_points=model_cfg.n_points,
        jitter_max_translation=train_cfg.jitter_max_translation,
        jitter_max_rotation=train_cfg.jitter_max_rotation,
    )

    history = []
    best_val = math.inf
    best_params = None
    for step in range(train_cfg.steps):
        rng = np.random.default_rng([train_cfg.seed, step, 405])
        replace = len(train_set) < train_cfg.batch_size
        idx = rng.choice(len(train_set), size=train_cfg.batch_size, replace=replace)
        batch = []
        for i in idx:
            s = train_set[int(i)]
            if train_cfg.jitter:
                s = transform_sample(s, jitter_transform(jcfg, int(rng.integers(2**31))))
            batch.append(s)
        breakdown, grads = loss_and_gradient(params, batch, loss_cfg)
        adam.step(params, grads, train_cfg, train_cfg.lr_at(step))

        row = {
            "step": step,
            "nll": breakdown.nll,
            "h_w": breakdown.h_w,
            "d_inter": breakdown.d_inter,
            "h_mode": breakdown.h_mode,
            "total": breakdown.total,
        }
        is_eval = val_subset and (
            (step + 1) % train_cfg.eval_every == 0 or step == train_cfg.steps - 1
        )
        if is_eval:
            val_nll = _mean_val_nll(params, val_subset, train_cfg.batch_size, loss_cfg)
            row["val_nll"] = val_nll
            if val_nll < best_val:
                best_val = val_nll
                best_params = params.copy()
        history.append(row)

    if best_params is None:
        best_params = params
    return best_params, history


def write_history_jsonl(path, history) -> None:
    """Line-delimited training records (step, loss terms, validation NLL)."""
    with open(path, "w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
