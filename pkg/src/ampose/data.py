"""Pose records: normalisation, root-relative targets, file I/O and a synthetic generator.

Record files are newline-delimited JSON, one sample per line::

    {"pose2d": [x0, y0, x1, y1, ...], "pose3d": [x0, y0, z0, ...], "meta": {...}}

``pose2d`` holds screen-normalised coordinates, ``pose3d`` root-relative
millimetres. ``meta`` is optional and free-form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import Skeleton, hop_distances


class DataError(ValueError):
    pass


@dataclass
class PoseSample:
    pose2d: np.ndarray  # (J, 2) normalised
    pose3d: np.ndarray | None  # (J, 3) root-relative mm; None for unlabeled inputs
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class Dataset:
    skeleton: Skeleton
    samples: list[PoseSample]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> PoseSample:
        return self.samples[i]

    def inputs(self) -> np.ndarray:
        return np.stack([s.pose2d for s in self.samples]) if self.samples else np.zeros((0, self.skeleton.num_joints, 2))

    def targets(self) -> np.ndarray:
        if any(s.pose3d is None for s in self.samples):
            raise DataError("dataset has samples without 3D targets")
        return np.stack([s.pose3d for s in self.samples]) if self.samples else np.zeros((0, self.skeleton.num_joints, 3))


def normalize_2d(pixels, width: float, height: float) -> np.ndarray:
    """Map pixel coordinates so x spans [-1, 1] over the image width, keeping aspect ratio."""
    if width <= 0 or height <= 0:
        raise DataError(f"image size must be positive, got {width}x{height}")
    p = np.asarray(pixels, dtype=np.float64)
    return p / width * 2.0 - np.array([1.0, height / width])


def denormalize_2d(coords, width: float, height: float) -> np.ndarray:
    if width <= 0 or height <= 0:
        raise DataError(f"image size must be positive, got {width}x{height}")
    c = np.asarray(coords, dtype=np.float64)
    return (c + np.array([1.0, height / width])) * width / 2.0


def root_relative_3d(pose3d, root: int) -> np.ndarray:
    p = np.asarray(pose3d, dtype=np.float64)
    if not 0 <= root < p.shape[-2]:
        raise DataError(f"root index {root} out of range for {p.shape[-2]} joints")
    return p - p[..., root : root + 1, :]


# record files

def _parse_record(line: str, idx: int, skeleton: Skeleton, require_3d: bool) -> PoseSample:
    j = skeleton.num_joints
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"record {idx}: malformed JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or "pose2d" not in rec:
        raise DataError(f"record {idx}: missing 'pose2d'")

    def field_array(key: str, width: int) -> np.ndarray:
        try:
            arr = np.asarray(rec[key], dtype=np.float64)
        except (TypeError, ValueError):
            raise DataError(f"record {idx}: '{key}' is not a list of numbers") from None
        if arr.ndim != 1 or arr.size % width:
            raise DataError(f"record {idx}: '{key}' must be a flat list of {width}*J numbers")
        if arr.size != width * j:
            raise DataError(f"record {idx}: '{key}' has {arr.size // width} joints, skeleton {skeleton.name} has {j}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"record {idx}: '{key}' contains non-finite values")
        return arr.reshape(j, width)

    pose2d = field_array("pose2d", 2)
    pose3d = None
    if rec.get("pose3d") is not None:
        pose3d = field_array("pose3d", 3)
        if np.any(pose3d[skeleton.root] != 0.0):
            raise DataError(f"record {idx}: pose3d is not root-relative (root joint {skeleton.root} nonzero)")
    elif require_3d:
        raise DataError(f"record {idx}: missing 'pose3d'")
    meta = rec.get("meta") or {}
    if not isinstance(meta, dict):
        raise DataError(f"record {idx}: 'meta' must be a mapping")
    return PoseSample(pose2d, pose3d, meta)


def load_dataset(path: str | Path, skeleton: Skeleton, split: str = "train", require_3d: bool = True) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    samples = []
    with path.open() as fh:
        for idx, line in enumerate(ln for ln in fh if ln.strip()):
            samples.append(_parse_record(line, idx, skeleton, require_3d))
    return Dataset(skeleton, samples, split)


def record_line(sample: PoseSample) -> str:
    rec: dict[str, Any] = {"pose2d": sample.pose2d.reshape(-1).tolist()}
    if sample.pose3d is not None:
        rec["pose3d"] = sample.pose3d.reshape(-1).tolist()
    if sample.meta:
        rec["meta"] = sample.meta
    return json.dumps(rec, sort_keys=True)


def save_dataset(dataset: Dataset | Iterable[PoseSample], path: str | Path) -> None:
    samples = dataset.samples if isinstance(dataset, Dataset) else dataset
    with Path(path).open("w") as fh:
        for s in samples:
            fh.write(record_line(s) + "\n")


def convert_records(path: str | Path, skeleton: Skeleton) -> Dataset:
    """Read externally prepared records with pixel keypoints and camera-frame 3D joints.

    Each line: ``{"keypoints2d_px": [...2J], "joints3d_mm": [...3J],
    "width": W, "height": H, "meta": {...}}``. Output is normalised and
    root-relative.
    """
    j = skeleton.num_joints
    samples = []
    with Path(path).open() as fh:
        for idx, line in enumerate(ln for ln in fh if ln.strip()):
            try:
                rec = json.loads(line)
                px = np.asarray(rec["keypoints2d_px"], dtype=np.float64).reshape(j, 2)
                xyz = np.asarray(rec["joints3d_mm"], dtype=np.float64).reshape(j, 3)
                w, h = float(rec["width"]), float(rec["height"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"record {idx}: cannot convert ({exc})") from None
            if not (np.all(np.isfinite(px)) and np.all(np.isfinite(xyz))):
                raise DataError(f"record {idx}: non-finite values")
            samples.append(PoseSample(normalize_2d(px, w, h), root_relative_3d(xyz, skeleton.root), rec.get("meta") or {}))
    return Dataset(skeleton, samples)


# synthetic poses

@dataclass(frozen=True)
class PinholeCamera:
    focal: float = 1000.0
    width: int = 1000
    height: int = 1000

    def project(self, points_cam) -> np.ndarray:
        p = np.asarray(points_cam, dtype=np.float64)
        centre = np.array([self.width / 2.0, self.height / 2.0])
        return self.focal * p[..., :2] / p[..., 2:3] + centre


# rest direction (body frame: x = subject's left, y up, z forward) and length in mm
_BONES: dict[str, tuple[tuple[float, float, float], float]] = {
    "r_hip": ((-1, 0, 0), 130.0),
    "r_knee": ((0, -1, 0), 450.0),
    "r_ankle": ((0, -1, 0), 440.0),
    "l_hip": ((1, 0, 0), 130.0),
    "l_knee": ((0, -1, 0), 450.0),
    "l_ankle": ((0, -1, 0), 440.0),
    "spine": ((0, 1, 0), 230.0),
    "thorax": ((0, 1, 0), 250.0),
    "neck": ((0, 1, 0), 110.0),
    "head": ((0, 1, 0), 120.0),
    "l_shoulder": ((1, 0, 0), 150.0),
    "l_elbow": ((0, -1, 0), 280.0),
    "l_wrist": ((0, -1, 0), 250.0),
    "r_shoulder": ((-1, 0, 0), 150.0),
    "r_elbow": ((0, -1, 0), 280.0),
    "r_wrist": ((0, -1, 0), 250.0),
}
# head hangs straight off the thorax when the skeleton has no neck joint
_BONE_OVERRIDES = {("thorax", "head"): ((0, 1, 0), 230.0)}
_DEFAULT_BONE_LENGTH = 200.0
_MAX_BEND = 0.5  # radians per rotation-vector component
_BODY_TO_CAMERA = np.diag([1.0, -1.0, -1.0])


def _bone_table(skeleton: Skeleton) -> tuple[list[int], np.ndarray, np.ndarray, np.ndarray]:
    """Parent of each joint in BFS order, plus rest unit directions and lengths."""
    hop = hop_distances(skeleton)
    parent = [-1] * skeleton.num_joints
    for i, j in skeleton.edges:
        if hop[i] + 1 == hop[j] and parent[j] < 0:
            parent[j] = i
        elif hop[j] + 1 == hop[i] and parent[i] < 0:
            parent[i] = j
    order = sorted(range(skeleton.num_joints), key=lambda k: (hop[k], k))
    names = skeleton.joint_names or tuple(f"joint{k}" for k in range(skeleton.num_joints))
    dirs = np.zeros((skeleton.num_joints, 3))
    lengths = np.zeros(skeleton.num_joints)
    for k in order:
        if parent[k] < 0:
            continue
        entry = _BONE_OVERRIDES.get((names[parent[k]], names[k])) or _BONES.get(names[k])
        if entry is None:
            v = np.random.default_rng(k).normal(size=3)
            entry = (tuple(v), _DEFAULT_BONE_LENGTH)
        d = np.asarray(entry[0], dtype=np.float64)
        dirs[k] = d / np.linalg.norm(d)
        lengths[k] = entry[1]
    return order, np.array(parent), dirs, lengths


def _articulate(order, parent, dirs, lengths, rng: np.random.Generator) -> np.ndarray:
    n = len(parent)
    rot = [None] * n
    pos = np.zeros((n, 3))
    for k in order:
        local = Rotation.from_rotvec(rng.uniform(-_MAX_BEND, _MAX_BEND, size=3))
        p = parent[k]
        if p < 0:
            rot[k] = Rotation.identity()
            continue
        rot[k] = rot[p] * local
        pos[k] = pos[p] + lengths[k] * rot[k].apply(dirs[k])
    return pos


def synth_dataset(seed: int, n_samples: int, skeleton: Skeleton, camera: PinholeCamera | None = None) -> Dataset:
    """Randomly articulated poses with fixed bone lengths, seen by one pinhole camera.

    ``meta["root_cam"]`` keeps the camera-frame root position so the 2D
    input can be reproduced exactly from the 3D target.
    """
    if n_samples < 1:
        raise DataError(f"n_samples must be >= 1, got {n_samples}")
    camera = camera or PinholeCamera()
    rng = np.random.default_rng(seed)
    order, parent, dirs, lengths = _bone_table(skeleton)
    samples = []
    for i in range(n_samples):
        body = _articulate(order, parent, dirs, lengths, rng)
        yaw = Rotation.from_euler("y", rng.uniform(-math.pi, math.pi)).as_matrix()
        rel = body @ yaw.T @ _BODY_TO_CAMERA.T
        rel = rel - rel[skeleton.root]
        root_cam = np.array([rng.uniform(-300, 300), rng.uniform(-300, 300), rng.uniform(4500, 5500)])
        pose2d = normalize_2d(camera.project(rel + root_cam), camera.width, camera.height)
        samples.append(PoseSample(pose2d, rel, {"index": i, "root_cam": root_cam.tolist()}))
    return Dataset(skeleton, samples, "synthetic")


def bone_lengths(pose3d: np.ndarray, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    p = np.asarray(pose3d)
    return np.array([np.linalg.norm(p[..., i, :] - p[..., j, :], axis=-1) for i, j in edges]).T
