"""Optimization loop, metrics logging, and checkpoint evaluation.

Training uses Adam with plateau-based learning-rate decay on the epoch
mean of the total loss, optional gradient-norm clipping, and a JSON-lines
metrics log. Everything is deterministic for a fixed seed on a fixed
platform: weight init, batch shuffling, and latent sampling all derive
from TrainConfig.rng_seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .anomaly import (
    assemble_score_series,
    evaluate_scores,
    joint_error_steps,
    person_error_steps,
)
from .data import FrameLabelSet, WindowedSample
from .errors import ConfigError, NonFiniteLossError
from .losses import ALL_TERMS, LossWeights, compute_losses
from .predictor import (
    PosePredictor,
    PredictorConfig,
    load_checkpoint,
    save_checkpoint,
)
from .skeleton import bone_features_to_joints

_EVAL_BATCH = 1024


def default_epochs(tau: int) -> int:
    """Epoch budget per timescale: 250 for short (<=5), 500 for long."""
    return 250 if tau <= 5 else 500


@dataclass(frozen=True)
class TrainConfig:
    tau: int = 3
    delta: int = 3
    batch_size: int = 64
    epochs: int | None = None        # None resolves via default_epochs(tau)
    base_lr: float = 1e-3
    lr_decay_factor: float = 0.2
    plateau_patience: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    enabled_losses: frozenset = ALL_TERMS
    rng_seed: int = 0
    checkpoint_every: int = 0        # steps between checkpoints; 0 = final only
    grad_clip: float | None = 10.0   # None disables clipping

    def __post_init__(self):
        if self.tau < 1 or self.delta < 1:
            raise ConfigError("tau and delta must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ConfigError("lr_decay_factor must be in (0, 1)")
        if self.plateau_patience < 0:
            raise ConfigError("plateau_patience must be >= 0")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or None")
        object.__setattr__(
            self, "enabled_losses", frozenset(self.enabled_losses)
        )
        if not self.enabled_losses <= ALL_TERMS:
            raise ConfigError(
                f"enabled_losses must be a subset of {sorted(ALL_TERMS)}"
            )

    @property
    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else default_epochs(self.tau)


def _window_tensors(
    windows: Sequence[WindowedSample],
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    obs = torch.as_tensor(
        np.stack([w.observation for w in windows]), dtype=torch.float32
    )
    tgt = torch.as_tensor(
        np.stack([w.target for w in windows]), dtype=torch.float32
    )
    dims = torch.as_tensor(
        np.array([[w.frame_width, w.frame_height] for w in windows]),
        dtype=torch.float32,
    )
    return obs, tgt, dims


def _check_windows(
    windows: Sequence[WindowedSample], tau: int, delta: int
) -> None:
    if not windows:
        raise ConfigError("window set is empty")
    for w in windows:
        if w.tau != tau or w.delta != delta:
            raise ConfigError(
                f"window ({w.tau}, {w.delta}) does not match configured "
                f"({tau}, {delta}); one model per timescale"
            )


def train(
    config: TrainConfig,
    train_windows: Sequence[WindowedSample],
    predictor_config: PredictorConfig | None = None,
    out_dir: str | Path | None = None,
) -> tuple[PosePredictor, list[dict]]:
    """Train a predictor on windowed samples.

    Returns the trained model and the per-step metrics records. When
    out_dir is given, also writes metrics.jsonl and checkpoint.bin there
    (plus step-numbered checkpoints if checkpoint_every > 0).

    Raises:
        ConfigError: empty window set or tau/delta mismatch.
        NonFiniteLossError: a loss went NaN/Inf; message carries the
            step/epoch/batch identifier.
    """
    _check_windows(train_windows, config.tau, config.delta)
    if predictor_config is None:
        predictor_config = PredictorConfig(tau=config.tau, delta=config.delta)
    if (predictor_config.tau, predictor_config.delta) != (
        config.tau, config.delta,
    ):
        raise ConfigError("predictor and train configs disagree on tau/delta")

    torch.manual_seed(config.rng_seed)
    model = PosePredictor(predictor_config)
    model.train()
    generator = torch.Generator().manual_seed(config.rng_seed)
    shuffle_rng = np.random.default_rng(config.rng_seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.base_lr)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        factor=config.lr_decay_factor,
        patience=config.plateau_patience,
    )

    obs, tgt, dims = _window_tensors(train_windows)
    n = len(train_windows)
    metrics: list[dict] = []
    out_path = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out_path / "metrics.jsonl", "w")
    step = 0
    try:
        for epoch in range(config.resolved_epochs):
            perm = shuffle_rng.permutation(n)
            epoch_totals = []
            for i in range(0, n, config.batch_size):
                idx = torch.as_tensor(perm[i : i + config.batch_size])
                optimizer.zero_grad()
                bones, goal, prior, recog = model.forward_train(
                    obs[idx], tgt[idx], generator=generator
                )
                try:
                    report = compute_losses(
                        bones, goal, tgt[idx], dims[idx], prior, recog,
                        config.weights, config.enabled_losses,
                    )
                except NonFiniteLossError as exc:
                    raise NonFiniteLossError(
                        f"step {step}, epoch {epoch}, batch offset {i}: {exc}"
                    ) from exc
                report.total.backward()
                if config.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(
                        model.parameters(), config.grad_clip
                    )
                optimizer.step()
                with torch.no_grad():
                    batch_tgt = tgt[idx]
                    seq_l2 = torch.linalg.vector_norm(
                        batch_tgt - bones, dim=-1
                    ).sum(dim=-1)
                    goal_l2 = torch.linalg.vector_norm(
                        batch_tgt[:, -1, :] - goal, dim=-1
                    )
                    traj_l2 = float((seq_l2 + goal_l2).mean())
                record = {
                    "step": step,
                    "epoch": epoch,
                    "lr": optimizer.param_groups[0]["lr"],
                    "traj_l2": traj_l2,
                    **report.as_floats(),
                }
                metrics.append(record)
                if metrics_file is not None:
                    metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
                epoch_totals.append(record["total"])
                step += 1
                if (
                    out_path is not None
                    and config.checkpoint_every > 0
                    and step % config.checkpoint_every == 0
                ):
                    save_checkpoint(
                        out_path / f"checkpoint-{step:07d}.bin",
                        model, step=step, rng_seed=config.rng_seed,
                    )
            scheduler.step(float(np.mean(epoch_totals)))
    finally:
        if metrics_file is not None:
            metrics_file.close()
    model.eval()
    if out_path is not None:
        save_checkpoint(
            out_path / "checkpoint.bin",
            model, step=step, rng_seed=config.rng_seed,
        )
    return model, metrics


def predict_windows(
    model: PosePredictor,
    windows: Sequence[WindowedSample],
    k_samples: int | None = None,
    latent_mode: str = "mean",
    generator: torch.Generator | None = None,
) -> np.ndarray:
    """Predict bone features for every window; returns (W, delta, 36).

    With k_samples > 1 (stochastic mode) each window keeps the draw with
    the lowest joint error against its ground-truth target.
    """
    _check_windows(windows, model.config.tau, model.config.delta)
    model.eval()
    k = model.config.k_samples if k_samples is None else k_samples
    outputs = []
    with torch.no_grad():
        for lo in range(0, len(windows), _EVAL_BATCH):
            chunk = windows[lo : lo + _EVAL_BATCH]
            obs, tgt, dims = _window_tensors(chunk)
            draws = model.forward_infer(
                obs, k_samples=k, mode=latent_mode, generator=generator
            )
            feats = draws.double().numpy()  # (B, K, delta, 36)
            if k == 1:
                outputs.append(feats[:, 0])
                continue
            gt = tgt.double().numpy()
            gt_joints = bone_features_to_joints(gt)
            pred_joints = bone_features_to_joints(feats)
            err = np.sqrt(
                ((pred_joints - gt_joints[:, None]) ** 2).sum(axis=(-2, -1))
            ).sum(axis=-1)  # (B, K)
            best = err.argmin(axis=1)
            outputs.append(feats[np.arange(len(chunk)), best])
    return np.concatenate(outputs, axis=0)


def score_windows(
    model: PosePredictor,
    windows: Sequence[WindowedSample],
    labels: Mapping[str, FrameLabelSet],
    error_mode: str = "summed",
    k_samples: int | None = None,
    latent_mode: str = "mean",
    generator: torch.Generator | None = None,
    features: np.ndarray | None = None,
) -> tuple[dict, dict]:
    """Run inference and the full scoring pipeline.

    Returns (series_by_video, diagnostics) where diagnostics carries the
    per-step joint-error values split by the target frame's label.
    Precomputed per-window features (W, delta, 36) may be passed in to
    skip inference.
    """
    if features is None:
        features = predict_windows(
            model, windows, k_samples=k_samples,
            latent_mode=latent_mode, generator=generator,
        )
    elif features.shape[0] != len(windows):
        raise ConfigError("features row count must match window count")
    track_errors: dict[tuple[str, str], list] = {}
    joint_err_normal: list[float] = []
    joint_err_anom: list[float] = []
    for w, feats in zip(windows, features):
        scale = np.array([w.frame_width, w.frame_height])
        pred_joints = bone_features_to_joints(feats) * scale
        gt_joints = w.target_joints()
        errs = person_error_steps(gt_joints, pred_joints, w.target_confidences)
        track_errors.setdefault((w.video_id, w.track_id), []).append(
            (w.target_frames, errs)
        )
        if w.video_id in labels:
            per_step = joint_error_steps(pred_joints, gt_joints)
            frame_labels = labels[w.video_id].labels
            for frame, value in zip(w.target_frames, per_step):
                if frame_labels[frame] == 1:
                    joint_err_anom.append(float(value))
                else:
                    joint_err_normal.append(float(value))
    n_frames = {video: len(ls) for video, ls in labels.items()}
    series = assemble_score_series(track_errors, n_frames, mode=error_mode)
    diagnostics = {
        "joint_error_normal": (
            float(np.mean(joint_err_normal)) if joint_err_normal else None
        ),
        "joint_error_anomalous": (
            float(np.mean(joint_err_anom)) if joint_err_anom else None
        ),
    }
    return series, diagnostics


def evaluate_checkpoint(
    checkpoint,
    test_windows: Sequence[WindowedSample],
    labels: Mapping[str, FrameLabelSet],
    error_mode: str = "summed",
    k_samples: int | None = None,
    latent_mode: str = "mean",
) -> dict:
    """Score test windows with a checkpoint and compute the metric report.

    checkpoint may be a file path or a PosePredictor. The report carries
    auc, auc_hr, the joint-error split, and a per-timescale breakdown.
    """
    if isinstance(checkpoint, PosePredictor):
        model = checkpoint
        seed = 0
    else:
        model, meta = load_checkpoint(checkpoint)
        seed = int(meta.get("rng_seed", 0))
    _check_windows(test_windows, model.config.tau, model.config.delta)
    generator = torch.Generator().manual_seed(seed)
    series, diagnostics = score_windows(
        model, test_windows, labels, error_mode=error_mode,
        k_samples=k_samples, latent_mode=latent_mode, generator=generator,
    )
    aucs = evaluate_scores(series, labels)
    body = {
        "auc": aucs["auc"],
        "auc_hr": aucs["auc_hr"],
        "joint_error_normal": diagnostics["joint_error_normal"],
        "joint_error_anomalous": diagnostics["joint_error_anomalous"],
        "error_mode": error_mode,
        "n_windows": len(test_windows),
    }
    report = dict(body)
    report["tau"] = model.config.tau
    report["delta"] = model.config.delta
    report["timescales"] = {str(model.config.tau): body}
    return report
