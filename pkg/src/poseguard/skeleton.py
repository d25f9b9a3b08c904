"""Kinematic-tree data model, pose<->bone transforms, and normalization.

Joints follow the 17-keypoint COCO convention plus a synthetic 18th root
joint (mean of both shoulders and both hips). Joint labels are 1-based in
all public maps and documentation; array storage is 0-based.

The relative ("bone") representation of a pose is a 36-dim feature vector:
the normalized root position followed by 17 normalized bone vectors, where
bone n points from joint n to its parent. Normalization is min-max against
the frame: min 0, max (width, height) per axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from .errors import ConfigError, DimensionError, MissingJointError, ShapeError

NUM_JOINTS = 18
NUM_KEYPOINTS = 17
FEATURE_DIM = 2 * NUM_JOINTS  # root (2) + 17 bone vectors (34)

ROOT = 18
ORIGIN = 0  # sentinel parent of the root joint (the image origin)

# 1-based parent map. Left/right shoulders (6/7), hips (12/13) and the nose
# (1) hang off the root; the face chains run nose -> eye -> ear.
PARENT: dict[int, int] = {
    1: 18, 2: 1, 3: 1, 4: 2, 5: 3,
    6: 18, 7: 18, 8: 6, 9: 7, 10: 8, 11: 9,
    12: 18, 13: 18, 14: 12, 15: 13, 16: 14, 17: 15,
    18: ORIGIN,
}

# Ordered root-to-tip chains used by the endpoint loss.
ENDPOINT_TRACKS: dict[str, tuple[int, int, int]] = {
    "LA": (6, 8, 10),
    "RA": (7, 9, 11),
    "LL": (12, 14, 16),
    "RL": (13, 15, 17),
    "LF": (1, 2, 4),
    "RF": (1, 3, 5),
}

JOINT_NAMES: dict[int, str] = {
    1: "nose", 2: "left_eye", 3: "right_eye", 4: "left_ear", 5: "right_ear",
    6: "left_shoulder", 7: "right_shoulder", 8: "left_elbow", 9: "right_elbow",
    10: "left_wrist", 11: "right_wrist", 12: "left_hip", 13: "right_hip",
    14: "left_knee", 15: "right_knee", 16: "left_ankle", 17: "right_ankle",
    18: "root",
}

_ROOT_SOURCE_JOINTS = (6, 7, 12, 13)  # root = mean of these


@dataclass(frozen=True)
class SkeletonTopology:
    """Parent map and endpoint tracks of the kinematic tree.

    Immutable; use DEFAULT_TOPOLOGY rather than constructing new instances
    unless you are deliberately testing validation.
    """

    parent: Mapping[int, int] = field(default_factory=lambda: dict(PARENT))
    endpoint_tracks: Mapping[str, tuple[int, ...]] = field(
        default_factory=lambda: dict(ENDPOINT_TRACKS)
    )

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check the parent map is a tree rooted at 18 and tracks are chains."""
        joints = set(range(1, NUM_JOINTS + 1))
        if set(self.parent) != joints:
            raise ConfigError("parent map must cover joints 1..18 exactly")
        if self.parent[ROOT] != ORIGIN:
            raise ConfigError("the root joint must have the origin as parent")
        for n in joints - {ROOT}:
            seen = set()
            cur = n
            while cur != ROOT:
                if cur in seen:
                    raise ConfigError(f"cycle in parent map involving joint {cur}")
                seen.add(cur)
                cur = self.parent.get(cur, None)
                if cur is None or cur == ORIGIN or cur not in joints:
                    raise ConfigError(f"joint {n} does not reach the root")
        for name, track in self.endpoint_tracks.items():
            prev = ROOT
            for j in track:
                if self.parent[j] != prev:
                    raise ConfigError(
                        f"endpoint track {name} is not a root-to-tip chain"
                    )
                prev = j

    def topological_order(self) -> list[int]:
        """Joint labels ordered parents-before-children, root excluded."""
        children: dict[int, list[int]] = {j: [] for j in range(1, NUM_JOINTS + 1)}
        for j, p in self.parent.items():
            if p != ORIGIN:
                children[p].append(j)
        order, queue = [], [ROOT]
        while queue:
            cur = queue.pop(0)
            for child in sorted(children[cur]):
                order.append(child)
                queue.append(child)
        return order


DEFAULT_TOPOLOGY = SkeletonTopology()

# 0-based parent row indices for joints 1..17, used by vectorized transforms
# and the bone/endpoint losses.
PARENT_IDX0: list[int] = [PARENT[n] - 1 for n in range(1, NUM_JOINTS)]
_TOPO_ORDER: list[int] = DEFAULT_TOPOLOGY.topological_order()


@dataclass
class JointSet:
    """One pedestrian's 18 joint positions at a single frame.

    joints is an (18, 2) array of (x, y) pixel positions; confidences holds
    the 17 detector scores for joints 1..17 (the synthetic root has none).
    """

    joints: np.ndarray
    frame_width: float
    frame_height: float
    confidences: np.ndarray | None = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.shape != (NUM_JOINTS, 2):
            raise ShapeError(f"joints must be (18, 2), got {self.joints.shape}")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise DimensionError(
                f"frame dims must be positive, got "
                f"{self.frame_width}x{self.frame_height}"
            )
        if self.confidences is not None:
            self.confidences = np.asarray(self.confidences, dtype=np.float64)
            if self.confidences.shape != (NUM_KEYPOINTS,):
                raise ShapeError("confidences must have 17 entries")

    @classmethod
    def from_detection(
        cls,
        keypoints: np.ndarray,
        confidences: np.ndarray,
        frame_width: float,
        frame_height: float,
    ) -> "JointSet":
        """Build from a 17-keypoint detection, synthesizing the root joint."""
        keypoints = np.asarray(keypoints, dtype=np.float64)
        if keypoints.shape != (NUM_KEYPOINTS, 2):
            raise ShapeError(f"keypoints must be (17, 2), got {keypoints.shape}")
        root = make_root(keypoints)
        joints = np.vstack([keypoints, root[None, :]])
        return cls(joints, frame_width, frame_height, confidences=confidences)

    @property
    def root_confidence(self) -> float:
        """Mean confidence of the four joints the root is built from."""
        if self.confidences is None:
            raise MissingJointError("joint set carries no confidences")
        idx = [j - 1 for j in _ROOT_SOURCE_JOINTS]
        return float(np.mean(self.confidences[idx]))


@dataclass
class BoneSet:
    """Relative pose representation: normalized root + 17 normalized bones."""

    root: np.ndarray   # (2,)
    bones: np.ndarray  # (17, 2), bones[n-1] = (J_parent(n) - J_n) / (w, h)

    def __post_init__(self):
        self.root = np.asarray(self.root, dtype=np.float64)
        self.bones = np.asarray(self.bones, dtype=np.float64)
        if self.root.shape != (2,):
            raise ShapeError("root must be a 2-vector")
        if self.bones.shape != (NUM_KEYPOINTS, 2):
            raise ShapeError("bones must be (17, 2)")

    def to_features(self) -> np.ndarray:
        """Flatten to the 36-dim feature vector [root, bone_1, ..., bone_17]."""
        return np.concatenate([self.root, self.bones.reshape(-1)])

    @classmethod
    def from_features(cls, features: np.ndarray) -> "BoneSet":
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (FEATURE_DIM,):
            raise ShapeError(f"features must be ({FEATURE_DIM},)")
        return cls(features[:2], features[2:].reshape(NUM_KEYPOINTS, 2))


def make_root(joints_17: np.ndarray) -> np.ndarray:
    """Mean of the left/right shoulder and hip joints.

    Raises MissingJointError if any contributing joint is non-finite.
    """
    joints_17 = np.asarray(joints_17, dtype=np.float64)
    if joints_17.shape != (NUM_KEYPOINTS, 2):
        raise ShapeError(f"expected (17, 2) joints, got {joints_17.shape}")
    idx = [j - 1 for j in _ROOT_SOURCE_JOINTS]
    contributors = joints_17[idx]
    if not np.all(np.isfinite(contributors)):
        bad = [
            _ROOT_SOURCE_JOINTS[i]
            for i in range(4)
            if not np.all(np.isfinite(contributors[i]))
        ]
        raise MissingJointError(f"root-contributing joints missing: {bad}")
    return contributors.mean(axis=0)


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def joints_to_bone_features(joints):
    """Normalized joints (..., 18, 2) -> bone features (..., 36).

    Accepts numpy arrays or torch tensors. Inputs must already be in
    normalized coordinates (pixels divided by frame width/height).
    """
    root = joints[..., ROOT - 1, :]
    parents = joints[..., PARENT_IDX0, :]
    bones = parents - joints[..., : NUM_KEYPOINTS, :]
    flat = bones.reshape(*bones.shape[:-2], 2 * NUM_KEYPOINTS)
    if _is_torch(joints):
        return torch.cat([root, flat], dim=-1)
    return np.concatenate([root, flat], axis=-1)


def bone_features_to_joints(features):
    """Bone features (..., 36) -> normalized joints (..., 18, 2).

    Inverse of joints_to_bone_features; works on numpy arrays and torch
    tensors and is differentiable under torch.
    """
    if features.shape[-1] != FEATURE_DIM:
        raise ShapeError(f"features must end in dim {FEATURE_DIM}")
    parts: list = [None] * NUM_JOINTS
    parts[ROOT - 1] = features[..., 0:2]
    for n in _TOPO_ORDER:
        bone = features[..., 2 * n : 2 * n + 2]
        parts[n - 1] = parts[PARENT[n] - 1] - bone
    if _is_torch(features):
        return torch.stack(parts, dim=-2)
    return np.stack(parts, axis=-2)


def pose_to_bones(pose: JointSet) -> BoneSet:
    """Convert an absolute pose into the normalized relative representation."""
    if pose.frame_width <= 0 or pose.frame_height <= 0:
        raise DimensionError("frame dims must be positive")
    scale = np.array([pose.frame_width, pose.frame_height], dtype=np.float64)
    features = joints_to_bone_features(pose.joints / scale)
    return BoneSet.from_features(features)


def bones_to_pose(
    bones: BoneSet, frame_width: float, frame_height: float
) -> JointSet:
    """Recover the absolute pose in pixels; exact inverse of pose_to_bones."""
    if frame_width <= 0 or frame_height <= 0:
        raise DimensionError("frame dims must be positive")
    scale = np.array([frame_width, frame_height], dtype=np.float64)
    joints = bone_features_to_joints(bones.to_features()) * scale
    return JointSet(joints, frame_width, frame_height)


def endpoint_track_indices() -> dict[str, tuple[Sequence[int], Sequence[int]]]:
    """0-based (joint, parent) index pairs per endpoint track.

    For track joints [a, b, c] returns ([a,b,c]-1, [parent(a),a,b]-1), the
    index arrays needed to form sum_n (J_hat_n - J_parent(n)).
    """
    out = {}
    for name, track in ENDPOINT_TRACKS.items():
        child_idx = [j - 1 for j in track]
        parent_idx = [PARENT[j] - 1 for j in track]
        out[name] = (child_idx, parent_idx)
    return out
