"""RGB point clouds with segment labels, voxel de-duplication, stitching,
and binary PLY serialization.

Positions are float64 so save/load round trips are bit-identical; colors
are float32 in [0, 1]; labels are int32 segment ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, FormatVersionMismatch, IoFailure
from .geometry import Pose, points_body_to_world

PLY_META_PREFIX = "comment basepose-meta "


@dataclass
class PointCloud:
    """N points with positions (N,3), colors (N,3) in [0,1], labels (N,)."""

    positions: np.ndarray
    colors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        n = len(self.positions)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (N, 3)")
        if self.colors.shape != (n, 3):
            raise ValueError("colors must have shape (N, 3)")
        if self.labels.shape != (n,):
            raise ValueError("labels must have shape (N,)")
        if n and (self.colors.min() < 0.0 or self.colors.max() > 1.0):
            raise ValueError("colors must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.positions)

    def take(self, idx) -> "PointCloud":
        return PointCloud(self.positions[idx], self.colors[idx], self.labels[idx])

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(
            np.zeros((0, 3), dtype=np.float64),
            np.zeros((0, 3), dtype=np.float32),
            np.zeros((0,), dtype=np.int32),
        )


def concat_clouds(clouds) -> PointCloud:
    clouds = list(clouds)
    if not clouds:
        raise EmptyInput("no clouds to concatenate")
    return PointCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        np.concatenate([c.labels for c in clouds]),
    )


@dataclass
class StitchedCloud:
    """Scene-frame cloud plus the voxel size used for de-duplication.

    voxel_size 0 marks a cloud that was never de-duplicated (e.g. a dense
    surface sampling used directly as a render source).
    """

    cloud: PointCloud
    voxel_size: float


def voxel_dedup(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Keep one representative point per occupied voxel, then enforce a
    minimum spacing of voxel_size / 2 across voxel boundaries.

    Representatives are the first point of each voxel in input order, and
    the spacing pass keeps lower input indices, so output is deterministic.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.positions / voxel_size).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first.sort()
    kept = cloud.take(first)

    tree = cKDTree(kept.positions)
    pairs = tree.query_pairs(r=voxel_size / 2.0, output_type="ndarray")
    if len(pairs):
        alive = np.ones(len(kept), dtype=bool)
        # query_pairs returns i < j; visiting in (i, j) order keeps the
        # earlier point of every conflicting pair.
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        for i, j in pairs[order]:
            if alive[i] and alive[j]:
                alive[j] = False
        kept = kept.take(np.flatnonzero(alive))
    return kept


def stitch(frames, voxel_size: float) -> StitchedCloud:
    """Fuse body-frame frames captured at known poses into one scene-frame
    cloud, de-duplicated on a voxel grid.

    ``frames`` is a sequence of (PointCloud, Pose) with exact capture poses.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInput("stitch requires at least one frame")
    moved = []
    for cloud, pose in frames:
        if not isinstance(pose, Pose):
            raise TypeError("each frame must pair a cloud with its capture Pose")
        moved.append(
            PointCloud(points_body_to_world(cloud.positions, pose), cloud.colors, cloud.labels)
        )
    merged = concat_clouds(moved)
    if len(merged) == 0:
        raise EmptyInput("stitch received only empty frames")
    return StitchedCloud(voxel_dedup(merged, voxel_size), voxel_size)


_PLY_DTYPE = np.dtype(
    [
        ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
        ("red", "<f4"), ("green", "<f4"), ("blue", "<f4"),
        ("label", "<i4"),
    ]
)


def save_ply(path, cloud: PointCloud, meta: dict | None = None) -> None:
    """Write a binary little-endian PLY with per-point color and label.

    ``meta`` (config, seeds, ...) is embedded as a JSON comment so every
    output file carries its producing configuration.
    """
    path = Path(path)
    header = ["ply", "format binary_little_endian 1.0"]
    if meta is not None:
        header.append(PLY_META_PREFIX + json.dumps(meta, sort_keys=True))
    header += [
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property float red",
        "property float green",
        "property float blue",
        "property int label",
        "end_header",
    ]
    rows = np.empty(len(cloud), dtype=_PLY_DTYPE)
    rows["x"], rows["y"], rows["z"] = cloud.positions.T
    rows["red"], rows["green"], rows["blue"] = cloud.colors.T
    rows["label"] = cloud.labels
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(rows.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_ply(path) -> tuple[PointCloud, dict | None]:
    """Read a PLY written by :func:`save_ply`; returns (cloud, meta)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    end_tag = b"end_header\n"
    end = blob.find(end_tag)
    if not blob.startswith(b"ply\n") or end < 0:
        raise FormatVersionMismatch(f"{path} is not a PLY file")
    header_lines = blob[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in header_lines[1]:
        raise FormatVersionMismatch(f"{path}: unsupported PLY format line")
    meta = None
    count = None
    for line in header_lines:
        if line.startswith(PLY_META_PREFIX):
            meta = json.loads(line[len(PLY_META_PREFIX):])
        elif line.startswith("element vertex"):
            count = int(line.split()[-1])
    if count is None:
        raise FormatVersionMismatch(f"{path}: missing vertex element")
    body = blob[end + len(end_tag):]
    expected = count * _PLY_DTYPE.itemsize
    if len(body) < expected:
        raise IoFailure(f"{path}: truncated payload")
    rows = np.frombuffer(body[:expected], dtype=_PLY_DTYPE)
    cloud = PointCloud(
        np.stack([rows["x"], rows["y"], rows["z"]], axis=1),
        np.stack([rows["red"], rows["green"], rows["blue"]], axis=1),
        rows["label"].copy(),
    )
    return cloud, meta
