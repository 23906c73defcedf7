"""The learnable map from an ego-centric RGB point cloud to Gaussian
mixture parameters over poses.

Architecture: a per-point feedforward stack (shared weights, tanh), a
feature-wise max-pool to one global vector, and a feedforward head that
emits K*(1 + d + d*(d+1)/2) raw outputs. Raw outputs map to mixture
parameters as: weights = softmax(logits), means = identity, Cholesky
diagonal = softplus + floor, off-diagonal = identity. The encoder runs in
the configured compute dtype (float32 by default for speed); raw outputs
are promoted to float64 before the parameter map, so GmmParams always
satisfy their invariants at float64 precision.

Because only the per-feature argmax points receive gradient through the
max-pool, the hand-written backward pass touches a few hundred rows
instead of the full cloud.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import expit

from .cloud import PointCloud
from .errors import (
    FormatVersionMismatch,
    InvalidConfig,
    IoFailure,
    WrongPointCount,
)
from .gmm import GmmParams

CHECKPOINT_MAGIC = b"BPCKPT01"
CHECKPOINT_FORMAT_VERSION = 1

# Fixed position pre-scaling of the encoder input; keeps desk-scale
# coordinates inside the responsive range of tanh.
POSITION_SCALE = 3.0


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    return float(np.log(np.expm1(y)))


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and numeric settings of the mixture network."""

    n_kernels: int = 1
    pose_dim: int = 3
    n_points: int = 8192
    point_widths: tuple[int, ...] = (64, 128, 256)
    head_widths: tuple[int, ...] = (256,)
    diag_floor: float = 1e-3
    dtype: str = "float32"

    def __post_init__(self):
        if self.n_kernels < 1:
            raise InvalidConfig("n_kernels must be >= 1")
        if self.pose_dim not in (3, 4):
            raise InvalidConfig("pose_dim must be 3 or 4")
        if self.n_points < 1:
            raise InvalidConfig("n_points must be >= 1")
        if not self.point_widths or not self.head_widths:
            raise InvalidConfig("layer width tuples must be non-empty")
        if min(self.point_widths) < 1 or min(self.head_widths) < 1:
            raise InvalidConfig("layer widths must be positive")
        if self.diag_floor <= 0:
            raise InvalidConfig("diag_floor must be positive")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfig("dtype must be 'float32' or 'float64'")
        object.__setattr__(self, "point_widths", tuple(int(w) for w in self.point_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def chol_block(self) -> int:
        d = self.pose_dim
        return d + d * (d - 1) // 2

    @property
    def raw_dim(self) -> int:
        k, d = self.n_kernels, self.pose_dim
        return k * (1 + d + d * (d + 1) // 2)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        for key in ("point_widths", "head_widths"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class ModelParams:
    """All trainable tensors, in the declared checkpoint order."""

    config: ModelConfig
    point_weights: list[np.ndarray] = field(default_factory=list)
    point_biases: list[np.ndarray] = field(default_factory=list)
    head_weights: list[np.ndarray] = field(default_factory=list)
    head_biases: list[np.ndarray] = field(default_factory=list)
    out_weight: np.ndarray | None = None
    out_bias: np.ndarray | None = None

    def tensors(self):
        """(name, array) pairs in the declared serialization order."""
        for i, (w, b) in enumerate(zip(self.point_weights, self.point_biases)):
            yield f"point{i}.weight", w
            yield f"point{i}.bias", b
        for i, (w, b) in enumerate(zip(self.head_weights, self.head_biases)):
            yield f"head{i}.weight", w
            yield f"head{i}.bias", b
        yield "out.weight", self.out_weight
        yield "out.bias", self.out_bias

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            point_weights=[w.copy() for w in self.point_weights],
            point_biases=[b.copy() for b in self.point_biases],
            head_weights=[w.copy() for w in self.head_weights],
            head_biases=[b.copy() for b in self.head_biases],
            out_weight=self.out_weight.copy(),
            out_bias=self.out_bias.copy(),
        )


@dataclass
class EncoderFeatures:
    """Per-point features and their feature-wise max-pool."""

    per_point: np.ndarray
    global_feature: np.ndarray


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization.

    Hidden layers are Glorot-uniform. The output layer is near-zero with a
    bias chosen so an untrained model emits near-uniform weights, zero
    means, and unit-scale covariances.
    """
    rng = np.random.default_rng([int(seed), 15013])
    dt = config.np_dtype
    params = ModelParams(config=config)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dt)

    fan_in = 6
    for width in config.point_widths:
        params.point_weights.append(glorot(fan_in, width))
        params.point_biases.append(np.zeros(width, dtype=dt))
        fan_in = width
    for width in config.head_widths:
        params.head_weights.append(glorot(fan_in, width))
        params.head_biases.append(np.zeros(width, dtype=dt))
        fan_in = width

    params.out_weight = (0.01 * rng.standard_normal((fan_in, config.raw_dim))).astype(dt)
    bias = np.zeros(config.raw_dim, dtype=np.float64)
    k, d = config.n_kernels, config.pose_dim
    diag_bias = _softplus_inv(1.0 - config.diag_floor)
    for kk in range(k):
        block = k + k * d + kk * config.chol_block
        bias[block:block + d] = diag_bias
    params.out_bias = bias.astype(dt)
    return params


def _input_features(positions: np.ndarray, colors: np.ndarray, dt) -> np.ndarray:
    feats = np.empty(positions.shape[:-1] + (6,), dtype=dt)
    feats[..., :3] = positions / POSITION_SCALE
    feats[..., 3:] = colors
    return feats


def forward_batch(params: ModelParams, positions: np.ndarray, colors: np.ndarray):
    """Run the network on (B, N, 3) positions and colors.

    Returns (raw, cache): raw is (B, raw_dim) float64; cache holds the
    post-activations and argmax indices needed by :func:`backward_batch`.
    """
    cfg = params.config
    b, n = positions.shape[0], positions.shape[1]
    if n != cfg.n_points:
        raise WrongPointCount(f"expected {cfg.n_points} points, got {n}")
    dt = cfg.np_dtype
    x = _input_features(positions, colors, dt).reshape(b * n, 6)

    point_acts = [x]
    for w, bias in zip(params.point_weights, params.point_biases):
        x = x @ w
        x += bias
        np.tanh(x, out=x)
        point_acts.append(x)

    feat = x.reshape(b, n, -1)
    argmax = feat.argmax(axis=1)
    global_feat = np.take_along_axis(feat, argmax[:, None, :], axis=1)[:, 0, :]

    h = global_feat
    head_acts = [h]
    for w, bias in zip(params.head_weights, params.head_biases):
        h = h @ w
        h += bias
        np.tanh(h, out=h)
        head_acts.append(h)
    raw = h @ params.out_weight + params.out_bias

    cache = {
        "batch": b,
        "n": n,
        "point_acts": point_acts,
        "argmax": argmax,
        "head_acts": head_acts,
    }
    return raw.astype(np.float64), cache


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors()}


def backward_batch(params: ModelParams, cache: dict, d_raw: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of sum(raw * d_raw) w.r.t. all tensors.

    Only the argmax rows of the max-pool carry gradient, so the per-point
    stack is differentiated on that small row subset.
    """
    cfg = params.config
    dt = cfg.np_dtype
    grads = zero_grads(params)
    b, n = cache["batch"], cache["n"]
    f = cfg.point_widths[-1]

    d_raw = d_raw.astype(dt)
    grads["out.weight"] += cache["head_acts"][-1].T @ d_raw
    grads["out.bias"] += d_raw.sum(axis=0)
    dh = d_raw @ params.out_weight.T

    for i in range(len(params.head_weights) - 1, -1, -1):
        a = cache["head_acts"][i + 1]
        dz = dh * (1.0 - a * a)
        grads[f"head{i}.weight"] += cache["head_acts"][i].T @ dz
        grads[f"head{i}.bias"] += dz.sum(axis=0)
        dh = dz @ params.head_weights[i].T

    # dh is now the gradient at the pooled global feature, (B, F). Scatter
    # it onto the winning rows of the flattened per-point activations.
    argmax = cache["argmax"]
    rows = (np.arange(b)[:, None] * n + argmax).ravel()
    cols = np.tile(np.arange(f), b)
    urows, inverse = np.unique(rows, return_inverse=True)
    d_feat = np.zeros((len(urows), f), dtype=dt)
    np.add.at(d_feat, (inverse, cols), dh.astype(dt).ravel())

    d_act = d_feat
    for i in range(len(params.point_weights) - 1, -1, -1):
        a = cache["point_acts"][i + 1][urows]
        dz = d_act * (1.0 - a * a)
        grads[f"point{i}.weight"] += cache["point_acts"][i][urows].T @ dz
        grads[f"point{i}.bias"] += dz.sum(axis=0)
        if i > 0:
            d_act = dz @ params.point_weights[i].T
    return grads


def _tril_indices(d: int):
    return np.tril_indices(d, k=-1)


def raw_to_gmm(raw: np.ndarray, config: ModelConfig):
    """Map one float64 raw output vector to GmmParams; returns (gmm, cache)."""
    k, d = config.n_kernels, config.pose_dim
    raw = np.asarray(raw, dtype=np.float64)
    logits = raw[:k]
    shifted = logits - logits.max()
    ew = np.exp(shifted)
    weights = ew / ew.sum()
    means = raw[k:k + k * d].reshape(k, d).copy()
    chol = np.zeros((k, d, d), dtype=np.float64)
    diag_raw = np.empty((k, d), dtype=np.float64)
    rows, cols = _tril_indices(d)
    base = k + k * d
    for kk in range(k):
        block = raw[base + kk * config.chol_block: base + (kk + 1) * config.chol_block]
        diag_raw[kk] = block[:d]
        chol[kk][np.diag_indices(d)] = _softplus(block[:d]) + config.diag_floor
        chol[kk][rows, cols] = block[d:]
    gmm = GmmParams(weights=weights, means=means, chol=chol)
    cache = {"weights": weights, "diag_sigmoid": expit(diag_raw)}
    return gmm, cache


def raw_to_gmm_backward(config: ModelConfig, cache: dict,
                        d_weights: np.ndarray, d_means: np.ndarray,
                        d_chol: np.ndarray) -> np.ndarray:
    """Chain gradients w.r.t. mixture parameters back to the raw vector."""
    k, d = config.n_kernels, config.pose_dim
    w = cache["weights"]
    d_raw = np.empty(config.raw_dim, dtype=np.float64)
    d_raw[:k] = w * (d_weights - float(w @ d_weights))
    d_raw[k:k + k * d] = d_means.reshape(-1)
    rows, cols = _tril_indices(d)
    base = k + k * d
    for kk in range(k):
        block = d_raw[base + kk * config.chol_block: base + (kk + 1) * config.chol_block]
        block[:d] = np.diagonal(d_chol[kk]) * cache["diag_sigmoid"][kk]
        block[d:] = d_chol[kk][rows, cols]
    return d_raw


def _check_cloud(params: ModelParams, cloud: PointCloud) -> None:
    if len(cloud) != params.config.n_points:
        raise WrongPointCount(
            f"observation has {len(cloud)} points, model expects {params.config.n_points}"
        )


def forward(params: ModelParams, cloud: PointCloud):
    """Predict mixture parameters for one observation.

    Returns (GmmParams, EncoderFeatures). Permutation-invariant in the
    input points up to floating summation order.
    """
    _check_cloud(params, cloud)
    raw, cache = forward_batch(params, cloud.positions[None], cloud.colors[None])
    gmm, _ = raw_to_gmm(raw[0], params.config)
    per_point = cache["point_acts"][-1]
    features = EncoderFeatures(
        per_point=per_point,
        global_feature=np.take_along_axis(
            per_point.reshape(1, len(cloud), -1), cache["argmax"][:, None, :], axis=1
        )[0, 0, :],
    )
    return gmm, features


def saliency(params: ModelParams, cloud: PointCloud) -> np.ndarray:
    """Cosine similarity of each per-point feature to the pooled feature.

    Scores lie in [-1, 1]; high values mark points the encoder's global
    summary is most aligned with.
    """
    _, feats = forward(params, cloud)
    per = feats.per_point.astype(np.float64)
    g = feats.global_feature.astype(np.float64)
    gn = np.linalg.norm(g)
    pn = np.linalg.norm(per, axis=1)
    denom = np.maximum(pn * gn, 1e-30)
    return np.clip(per @ g / denom, -1.0, 1.0)


def save_checkpoint(path, params: ModelParams, training_seed: int | None = None) -> None:
    """Self-describing binary checkpoint; save -> load -> save is byte-identical."""
    tensors = list(params.tensors())
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "checkpoint",
        "config": params.config.to_dict(),
        "training_seed": training_seed,
        "tensors": [
            {"name": name, "shape": list(t.shape), "dtype": str(t.dtype)}
            for name, t in tensors
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, t in tensors:
                fh.write(np.ascontiguousarray(t).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path):
    """Returns (ModelParams, training_seed)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise FormatVersionMismatch(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", blob, len(CHECKPOINT_MAGIC))
    off = len(CHECKPOINT_MAGIC) + 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: checkpoint format {header.get('format_version')} unsupported"
        )
    config = ModelConfig.from_dict(header["config"])
    params = ModelParams(config=config)
    off += hlen
    arrays = {}
    for spec in header["tensors"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=off).reshape(spec["shape"])
        off += count * dt.itemsize
        arrays[spec["name"]] = arr.copy()
    n_point = len(config.point_widths)
    n_head = len(config.head_widths)
    params.point_weights = [arrays[f"point{i}.weight"] for i in range(n_point)]
    params.point_biases = [arrays[f"point{i}.bias"] for i in range(n_point)]
    params.head_weights = [arrays[f"head{i}.weight"] for i in range(n_head)]
    params.head_biases = [arrays[f"head{i}.bias"] for i in range(n_head)]
    params.out_weight = arrays["out.weight"]
    params.out_bias = arrays["out.bias"]
    return params, header.get("training_seed")
