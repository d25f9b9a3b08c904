"""Training objectives: trajectory, bone, endpoint, and joint losses.

All functions take torch tensors, are differentiable, and reduce the same
way: sum over joints/tracks within a pose, mean over prediction steps and
over the batch. The one exception is the trajectory loss, whose sequence
term sums (not averages) over prediction steps, matching its definition.

Coordinate conventions: bone/endpoint losses operate on normalized joints
(pixels divided by frame dims); the joint loss recovers pixel joints from
predicted bone features, takes pixel residuals, then re-normalizes each
axis by the frame dims so its magnitude is comparable with the others.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import torch

from .errors import (
    ConfigError,
    DimensionError,
    NonFiniteLossError,
    ShapeError,
)
from .predictor import LatentGaussian
from .skeleton import (
    FEATURE_DIM,
    NUM_JOINTS,
    NUM_KEYPOINTS,
    PARENT_IDX0,
    bone_features_to_joints,
    endpoint_track_indices,
)

ALL_TERMS = frozenset({"B", "E", "J"})

_TRACK_INDICES = endpoint_track_indices()


def _as_float(v) -> float:
    return float(v.detach()) if torch.is_tensor(v) else float(v)


@dataclass(frozen=True)
class LossWeights:
    """Weights alpha (bone), beta (endpoint), gamma (joint); all default 1."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    """All loss components for one step; fields may be floats or tensors."""

    trajectory: object
    bone: object
    endpoint: object
    joint: object
    kld: object
    total: object

    def as_floats(self) -> dict[str, float]:
        return {
            k: _as_float(getattr(self, k))
            for k in ("trajectory", "bone", "endpoint", "joint", "kld", "total")
        }


def kl_divergence(q: LatentGaussian, p: LatentGaussian) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, per sample.

    Returns a tensor over the leading (batch) dims; sum is over the latent
    dimension.
    """
    if q.mean.shape != p.mean.shape:
        raise ShapeError("latent distributions must share shapes")
    var_q = torch.exp(q.log_variance)
    var_p = torch.exp(p.log_variance)
    term = (
        p.log_variance - q.log_variance
        + (var_q + (q.mean - p.mean) ** 2) / var_p
        - 1.0
    )
    return 0.5 * term.sum(dim=-1)


def trajectory_loss(
    pred: torch.Tensor,
    goal_pred: torch.Tensor,
    target: torch.Tensor,
    prior: LatentGaussian,
    recog: LatentGaussian,
) -> torch.Tensor:
    """Goal L2 + per-step L2 summed over steps + KL(recog || prior).

    pred/target are (..., delta, 36), goal_pred (..., 36). Per-sample values
    are averaged over the batch.
    """
    if pred.shape != target.shape:
        raise ShapeError(
            f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}"
        )
    if goal_pred.shape != target.shape[:-2] + target.shape[-1:]:
        raise ShapeError("goal_pred must match target without the step dim")
    goal_term = torch.linalg.vector_norm(
        target[..., -1, :] - goal_pred, dim=-1
    )
    step_norms = torch.linalg.vector_norm(target - pred, dim=-1)
    seq_term = step_norms.sum(dim=-1)
    kld = kl_divergence(recog, prior)
    return (goal_term + seq_term + kld).mean()


def _all_bones(joints: torch.Tensor) -> torch.Tensor:
    """(..., 18, 2) joints -> (..., 18, 2) bones, root bone = -J_root."""
    bones = joints[..., PARENT_IDX0, :] - joints[..., :NUM_KEYPOINTS, :]
    root_bone = -joints[..., NUM_KEYPOINTS:, :]
    return torch.cat([bones, root_bone], dim=-2)


def bone_loss(pred_joints: torch.Tensor, gt_joints: torch.Tensor) -> torch.Tensor:
    """Sum over all 18 bones of the L1 bone-vector difference.

    Inputs are normalized joints (..., 18, 2); the root's bone is taken
    against the image origin. Reduction: sum within a pose, mean over all
    leading dims.
    """
    if pred_joints.shape != gt_joints.shape:
        raise ShapeError("pred and gt joint shapes must match")
    if pred_joints.shape[-2:] != (NUM_JOINTS, 2):
        raise ShapeError("joints must be (..., 18, 2)")
    diff = _all_bones(pred_joints) - _all_bones(gt_joints)
    per_pose = diff.abs().sum(dim=(-2, -1))
    return per_pose.mean()


def endpoint_loss(
    pred_joints: torch.Tensor,
    gt_joints: torch.Tensor,
    predicted_parents: bool = False,
) -> torch.Tensor:
    """Six-track endpoint consistency loss.

    For each extremity track the residuals (J_hat_n - J_parent(n)) are
    summed along the track first and the L1 norm wraps that sum; the six
    track norms are added. Parents come from the ground truth unless
    predicted_parents is set. Same reduction as bone_loss.
    """
    if pred_joints.shape != gt_joints.shape:
        raise ShapeError("pred and gt joint shapes must match")
    if pred_joints.shape[-2:] != (NUM_JOINTS, 2):
        raise ShapeError("joints must be (..., 18, 2)")
    parent_src = pred_joints if predicted_parents else gt_joints
    total = None
    for child_idx, parent_idx in _TRACK_INDICES.values():
        summed = (
            pred_joints[..., child_idx, :].sum(dim=-2)
            - parent_src[..., parent_idx, :].sum(dim=-2)
        )
        term = summed.abs().sum(dim=-1)
        total = term if total is None else total + term
    return total.mean()


def joint_loss(
    pred_bones: torch.Tensor,
    gt_joints_px: torch.Tensor,
    frame_dims: torch.Tensor,
) -> torch.Tensor:
    """Absolute-position loss on recovered joints.

    pred_bones (..., delta, 36) are decoded to pixel joints, compared with
    gt_joints_px (..., delta, 18, 2) by L1 residual, and each axis residual
    is divided by the frame dims (..., 2). Sum over the 18 joints, mean
    over steps and batch.
    """
    if pred_bones.shape[-1] != FEATURE_DIM:
        raise ShapeError("pred_bones must be (..., 36)")
    if gt_joints_px.shape[-2:] != (NUM_JOINTS, 2):
        raise ShapeError("gt joints must be (..., 18, 2)")
    if pred_bones.shape[:-1] != gt_joints_px.shape[:-2]:
        raise ShapeError("pred and gt leading shapes must match")
    if not torch.is_tensor(frame_dims):
        frame_dims = torch.as_tensor(frame_dims, dtype=pred_bones.dtype)
    if frame_dims.shape[-1] != 2:
        raise ShapeError("frame_dims must end in (width, height)")
    if not bool((frame_dims > 0).all()):
        raise DimensionError("frame dims must be positive")
    dims = frame_dims[..., None, None, :]  # broadcast over (step, joint)
    pred_px = bone_features_to_joints(pred_bones) * dims
    resid = (pred_px - gt_joints_px).abs() / dims
    per_pose = resid.sum(dim=(-2, -1))
    return per_pose.mean()


def total_loss(
    parts: Mapping[str, object],
    weights: LossWeights,
    enabled: Iterable[str] = ALL_TERMS,
) -> LossReport:
    """Combine components into the weighted total.

    parts must carry trajectory/bone/endpoint/joint (kld optional, for the
    report only). enabled selects which of the B/E/J terms count toward
    the total; disabled terms keep their reported value but contribute 0.

    Raises NonFiniteLossError if any part is NaN or infinite.
    """
    enabled = frozenset(enabled)
    if not enabled <= ALL_TERMS:
        raise ConfigError(
            f"enabled terms must be a subset of {sorted(ALL_TERMS)}, "
            f"got {sorted(enabled)}"
        )
    required = ("trajectory", "bone", "endpoint", "joint")
    for name in required:
        if name not in parts:
            raise ConfigError(f"missing loss part {name!r}")
        if not math.isfinite(_as_float(parts[name])):
            raise NonFiniteLossError(f"{name} loss is non-finite")
    kld = parts.get("kld", 0.0)
    if not math.isfinite(_as_float(kld)):
        raise NonFiniteLossError("kld is non-finite")
    a = weights.alpha if "B" in enabled else 0.0
    b = weights.beta if "E" in enabled else 0.0
    g = weights.gamma if "J" in enabled else 0.0
    total = (
        parts["trajectory"]
        + a * parts["bone"]
        + b * parts["endpoint"]
        + g * parts["joint"]
    )
    return LossReport(
        trajectory=parts["trajectory"],
        bone=parts["bone"],
        endpoint=parts["endpoint"],
        joint=parts["joint"],
        kld=kld,
        total=total,
    )


def compute_losses(
    pred_bones: torch.Tensor,
    goal_pred: torch.Tensor,
    target_bones: torch.Tensor,
    frame_dims: torch.Tensor,
    prior: LatentGaussian,
    recog: LatentGaussian,
    weights: LossWeights = LossWeights(),
    enabled: Iterable[str] = ALL_TERMS,
) -> LossReport:
    """Evaluate every component on a batch and combine them.

    pred_bones/target_bones are (B, delta, 36), goal_pred (B, 36),
    frame_dims (B, 2). Pose-level losses are applied at every prediction
    step. All components are computed regardless of the ablation mask so
    logs stay complete; only enabled ones enter the total.
    """
    pred_joints = bone_features_to_joints(pred_bones)
    gt_joints = bone_features_to_joints(target_bones)
    dims = frame_dims
    if not torch.is_tensor(dims):
        dims = torch.as_tensor(dims, dtype=pred_bones.dtype)
    gt_px = gt_joints * dims[..., None, None, :]
    parts = {
        "trajectory": trajectory_loss(
            pred_bones, goal_pred, target_bones, prior, recog
        ),
        "bone": bone_loss(pred_joints, gt_joints),
        "endpoint": endpoint_loss(pred_joints, gt_joints),
        "joint": joint_loss(pred_bones, gt_px, dims),
        "kld": kl_divergence(recog, prior).mean(),
    }
    return total_loss(parts, weights, enabled)
