"""Prediction errors -> person errors -> frame scores -> ROC AUC.

Per-step person errors are confidence-weighted squared pixel residuals
over the 17 detected joints. Overlapping prediction windows for a track
are combined per frame with either the summed or the flattened scheme,
tracks are max-pooled per frame, and AUC is computed over the
concatenated frames of all videos.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import FrameLabelSet, WindowedSample
from .errors import (
    DegenerateLabelsError,
    SchemaError,
    ShapeError,
    WeightError,
)
from .predictor import PredictionResult
from .skeleton import NUM_KEYPOINTS, JointSet

# (target frame indices (delta,), per-step person errors (delta,)) per window
WindowErrors = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class PersonError:
    """One pedestrian's prediction error at one frame."""

    video_id: str
    track_id: str
    frame: int
    e_p: float

    def __post_init__(self):
        if not np.isfinite(self.e_p) or self.e_p < 0:
            raise ShapeError(f"e_p must be finite and >= 0, got {self.e_p}")


@dataclass
class AnomalyScoreSeries:
    """Per-frame anomaly scores for one video.

    covered marks frames that received at least one windowed prediction;
    the rest carry the per-video minimum observed score.
    """

    video_id: str
    scores: np.ndarray            # (N,)
    covered: np.ndarray           # (N,) bool
    labels: FrameLabelSet | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.covered = np.asarray(self.covered, dtype=bool)
        if self.scores.shape != self.covered.shape or self.scores.ndim != 1:
            raise ShapeError("scores and covered must be equal-length 1-D")


def _check_weights(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[-1] != NUM_KEYPOINTS:
        raise ShapeError("weights must cover the 17 detected joints")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise WeightError("joint weights must be finite and >= 0")
    return weights


def person_error(gt, pred_joints, weights) -> float:
    """Confidence-weighted squared pixel error over joints 1..17.

    gt may be a JointSet or an (18, 2)/(17, 2) array; pred_joints likewise.
    The synthetic root joint never participates.
    """
    gt_arr = gt.joints if isinstance(gt, JointSet) else np.asarray(gt, float)
    pred_arr = np.asarray(pred_joints, dtype=np.float64)
    gt17 = gt_arr[..., :NUM_KEYPOINTS, :]
    pred17 = pred_arr[..., :NUM_KEYPOINTS, :]
    if gt17.shape != pred17.shape or gt17.shape[-2:] != (NUM_KEYPOINTS, 2):
        raise ShapeError("gt and pred must hold 17 (x, y) joints each")
    weights = _check_weights(weights)
    sq = ((gt17 - pred17) ** 2).sum(axis=-1)
    return float((weights * sq).sum())


def person_error_steps(
    gt_joints: np.ndarray, pred_joints: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Vectorized person_error over steps: (delta, 18|17, 2) -> (delta,)."""
    gt17 = np.asarray(gt_joints, dtype=np.float64)[..., :NUM_KEYPOINTS, :]
    pred17 = np.asarray(pred_joints, dtype=np.float64)[..., :NUM_KEYPOINTS, :]
    if gt17.shape != pred17.shape:
        raise ShapeError("gt and pred shapes must match")
    weights = _check_weights(weights)
    sq = ((gt17 - pred17) ** 2).sum(axis=-1)
    return (weights * sq).sum(axis=-1)


def window_step_errors(
    window: WindowedSample, prediction: PredictionResult
) -> WindowErrors:
    """Per-step person errors of one window against its ground truth."""
    gt_px = window.target_joints()
    errs = person_error_steps(
        gt_px, prediction.joints, window.target_confidences
    )
    return window.target_frames, errs


def summed_error(window_errors: Sequence[WindowErrors]) -> dict[int, float]:
    """Summed-error combination for one track.

    Each window's score is the sum of its per-step errors, assigned to
    every frame the window predicts; frames covered by several windows
    take the mean of the covering window scores (in window order).
    """
    per_frame: dict[int, list[float]] = {}
    for frames, errs in sorted(window_errors, key=lambda we: int(we[0][0])):
        score = float(np.sum(errs))
        for f in frames:
            per_frame.setdefault(int(f), []).append(score)
    return {f: float(np.mean(v)) for f, v in sorted(per_frame.items())}


def flattened_error(window_errors: Sequence[WindowErrors]) -> dict[int, float]:
    """Flattened-error combination for one track.

    Each frame takes the mean of the per-step errors that the covering
    windows assign to exactly that frame.
    """
    per_frame: dict[int, list[float]] = {}
    for frames, errs in sorted(window_errors, key=lambda we: int(we[0][0])):
        for f, e in zip(frames, errs):
            per_frame.setdefault(int(f), []).append(float(e))
    return {f: float(np.mean(v)) for f, v in sorted(per_frame.items())}


def frame_score(track_values: Iterable[float]) -> float:
    """Max-pool the per-track values present at one frame."""
    values = list(track_values)
    if not values:
        raise ShapeError("frame_score needs at least one track value")
    return float(max(values))


def assemble_score_series(
    track_errors: Mapping[tuple[str, str], Sequence[WindowErrors]],
    n_frames: Mapping[str, int],
    mode: str = "summed",
) -> dict[str, AnomalyScoreSeries]:
    """Combine per-track window errors into per-video frame score series.

    track_errors maps (video_id, track_id) to that track's window errors;
    n_frames gives each video's frame count. Frames no track scored take
    the per-video minimum observed score (0.0 if the video has none).
    """
    if mode == "summed":
        combine = summed_error
    elif mode == "flattened":
        combine = flattened_error
    else:
        raise SchemaError(f"error mode must be summed|flattened, got {mode!r}")
    per_video: dict[str, dict[int, list[float]]] = {
        video: {} for video in n_frames
    }
    for (video, track) in sorted(track_errors):
        if video not in per_video:
            raise SchemaError(f"track errors reference unknown video {video!r}")
        track_series = combine(track_errors[(video, track)])
        for frame, value in track_series.items():
            per_video[video].setdefault(frame, []).append(value)
    out = {}
    for video, count in n_frames.items():
        scores = np.zeros(count, dtype=np.float64)
        covered = np.zeros(count, dtype=bool)
        for frame, values in per_video[video].items():
            if not 0 <= frame < count:
                raise SchemaError(
                    f"video {video!r}: scored frame {frame} outside 0..{count - 1}"
                )
            scores[frame] = frame_score(values)
            covered[frame] = True
        fill = float(scores[covered].min()) if covered.any() else 0.0
        scores[~covered] = fill
        out[video] = AnomalyScoreSeries(video, scores, covered)
    return out


def roc_auc(
    scores: np.ndarray,
    labels: np.ndarray,
    hr_mask: np.ndarray | None = None,
) -> float:
    """Frame-level ROC AUC by the rank (Mann-Whitney) formula.

    Ties receive average ranks. hr_mask=True drops a frame before the
    computation. Raises DegenerateLabelsError if one class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be equal-length 1-D")
    if hr_mask is not None:
        hr_mask = np.asarray(hr_mask, dtype=bool)
        if hr_mask.shape != scores.shape:
            raise ShapeError("hr_mask length must match scores")
        scores = scores[~hr_mask]
        labels = labels[~hr_mask]
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both classes, got {n_pos} positive / {n_neg} negative"
        )
    ranks = rankdata(scores)
    return float(
        (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


def joint_error_metric(
    pred_joints: np.ndarray, gt_joints: np.ndarray, delta: int | None = None
) -> float:
    """Mean per-step joint RMSE-style error, scaled by 1/(delta*17).

    Inputs are (delta, 17, 2) (or (delta, 18, 2); the root row is dropped).
    Per step: the Euclidean norm over all 17 joint residuals; the values
    are summed over steps and divided by delta * 17.
    """
    pred = np.asarray(pred_joints, dtype=np.float64)[..., :NUM_KEYPOINTS, :]
    gt = np.asarray(gt_joints, dtype=np.float64)[..., :NUM_KEYPOINTS, :]
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-2:] != (
        NUM_KEYPOINTS, 2,
    ):
        raise ShapeError("expected (delta, 17, 2) joint arrays")
    if delta is None:
        delta = pred.shape[0]
    if delta != pred.shape[0]:
        raise ShapeError(f"delta {delta} does not match {pred.shape[0]} steps")
    per_step = np.sqrt(((pred - gt) ** 2).sum(axis=(-2, -1)))
    return float(per_step.sum() / (delta * NUM_KEYPOINTS))


def joint_error_steps(
    pred_joints: np.ndarray, gt_joints: np.ndarray
) -> np.ndarray:
    """Per-step values sqrt(sum_k ||residual_k||^2) / 17, shape (delta,).

    Grouping these by the target frame's label and averaging per group
    yields the normal/anomalous split of the joint-error diagnostic.
    """
    pred = np.asarray(pred_joints, dtype=np.float64)[..., :NUM_KEYPOINTS, :]
    gt = np.asarray(gt_joints, dtype=np.float64)[..., :NUM_KEYPOINTS, :]
    if pred.shape != gt.shape:
        raise ShapeError("pred and gt shapes must match")
    return np.sqrt(((pred - gt) ** 2).sum(axis=(-2, -1))) / NUM_KEYPOINTS


def evaluate_scores(
    series: Mapping[str, AnomalyScoreSeries],
    labels: Mapping[str, FrameLabelSet],
) -> dict:
    """AUC over concatenated videos, with and without HR masking.

    Returns {"auc": float, "auc_hr": float | None}; auc_hr is None when
    masking leaves a single class or no mask is present anywhere.
    """
    all_scores, all_labels, all_mask = [], [], []
    for video in sorted(series):
        if video not in labels:
            raise SchemaError(f"no labels for video {video!r}")
        ls = labels[video]
        s = series[video]
        if len(ls) != len(s.scores):
            raise ShapeError(
                f"video {video!r}: {len(s.scores)} scores vs "
                f"{len(ls)} labels"
            )
        all_scores.append(s.scores)
        all_labels.append(ls.labels)
        mask = ls.hr_mask if ls.hr_mask is not None else np.zeros(len(ls), bool)
        all_mask.append(mask)
    scores = np.concatenate(all_scores)
    labels_arr = np.concatenate(all_labels)
    mask = np.concatenate(all_mask)
    auc = roc_auc(scores, labels_arr)
    try:
        auc_hr = roc_auc(scores, labels_arr, hr_mask=mask)
    except DegenerateLabelsError:
        auc_hr = None
    return {"auc": auc, "auc_hr": auc_hr}


def write_score_csv(
    path: str | Path,
    series: Mapping[str, AnomalyScoreSeries],
    labels: Mapping[str, FrameLabelSet] | None = None,
) -> None:
    """Write per-frame scores with labels as CSV."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "frame", "score", "label", "hr_mask"])
        for video in sorted(series):
            s = series[video]
            ls = labels.get(video) if labels else None
            for frame in range(len(s.scores)):
                label = int(ls.labels[frame]) if ls is not None else 0
                mask = (
                    int(ls.hr_mask[frame])
                    if ls is not None and ls.hr_mask is not None
                    else 0
                )
                writer.writerow(
                    [video, frame, f"{s.scores[frame]:.12g}", label, mask]
                )


def read_score_csv(
    path: str | Path,
) -> tuple[dict[str, np.ndarray], dict[str, FrameLabelSet]]:
    """Read a score CSV back into per-video score arrays and labels."""
    path = Path(path)
    rows: dict[str, dict[int, tuple[float, int, int]]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"video_id", "frame", "score", "label", "hr_mask"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise SchemaError(
                f"{path}: header must contain columns {sorted(required)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                video = row["video_id"]
                frame = int(row["frame"])
                entry = (
                    float(row["score"]),
                    int(row["label"]),
                    int(row["hr_mask"]),
                )
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
            rows.setdefault(video, {})[frame] = entry
    scores, labels = {}, {}
    for video, per_video in rows.items():
        n = len(per_video)
        if sorted(per_video) != list(range(n)):
            raise SchemaError(f"{path}: video {video!r} frames must be 0..{n-1}")
        scores[video] = np.array([per_video[f][0] for f in range(n)])
        labels[video] = FrameLabelSet(
            video,
            np.array([per_video[f][1] for f in range(n)], dtype=np.int64),
            hr_mask=np.array([per_video[f][2] for f in range(n)], dtype=bool),
        )
    return scores, labels


def write_metric_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
