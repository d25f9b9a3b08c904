"""Pose-file ingestion, track windowing, archives, and synthetic gait data.

Input records follow the pose-JSON schema: one object per line (JSON-Lines)
or a top-level array, each record
{video_id, frame, track_id, width, height, keypoints: [x1,y1,c1, ...]} with
51 keypoint numbers in COCO order. Frame labels arrive as CSV with columns
video_id, frame, label, hr_mask; hr_mask=1 marks a frame dropped from
HR evaluation.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, ShapeError
from .fileio import WINDOW_MAGIC, read_container, write_container
from .skeleton import (
    FEATURE_DIM,
    NUM_KEYPOINTS,
    JointSet,
    bone_features_to_joints,
    joints_to_bone_features,
    make_root,
)

_ROOT_SRC = [5, 6, 11, 12]  # 0-based rows of shoulders/hips in a 17-row array

ANOMALY_KINDS = ("run", "jump", "flail")


@dataclass
class PoseSequence:
    """One pedestrian track over consecutive frames of one video."""

    video_id: str
    track_id: str
    frames: np.ndarray        # (N,) frame indices, consecutive
    joints: np.ndarray        # (N, 18, 2) pixel positions
    confidences: np.ndarray   # (N, 17)
    frame_width: float
    frame_height: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        n = len(self.frames)
        if self.joints.shape != (n, 18, 2):
            raise ShapeError(f"joints must be ({n}, 18, 2)")
        if self.confidences.shape != (n, NUM_KEYPOINTS):
            raise ShapeError(f"confidences must be ({n}, 17)")
        if n > 1 and not np.all(np.diff(self.frames) == 1):
            raise ShapeError("frames must be consecutive; split tracks at gaps")

    def __len__(self) -> int:
        return len(self.frames)

    def joint_set(self, i: int) -> JointSet:
        return JointSet(
            self.joints[i],
            self.frame_width,
            self.frame_height,
            confidences=self.confidences[i],
        )


@dataclass
class FrameLabelSet:
    """Per-frame binary anomaly labels for one video, frames 0..N-1.

    hr_mask marks frames excluded from HR evaluation (True = dropped).
    """

    video_id: str
    labels: np.ndarray            # (N,) 0/1
    hr_mask: np.ndarray | None = None  # (N,) bool

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ShapeError("labels must be 1-D")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise SchemaError(f"{self.video_id}: labels must be 0/1")
        if self.hr_mask is not None:
            self.hr_mask = np.asarray(self.hr_mask, dtype=bool)
            if self.hr_mask.shape != self.labels.shape:
                raise ShapeError("hr_mask length must match labels")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class WindowedSample:
    """One sliding-window training/evaluation sample of length tau+delta.

    observation/target hold per-step 36-dim bone features; confidences
    cover all tau+delta source frames. start_frame is the source frame
    index of observation step 0, so the target covers frames
    start_frame+tau .. start_frame+tau+delta-1.
    """

    video_id: str
    track_id: str
    start_frame: int
    frame_width: float
    frame_height: float
    observation: np.ndarray   # (tau, 36)
    target: np.ndarray        # (delta, 36)
    confidences: np.ndarray   # (tau+delta, 17)

    def __post_init__(self):
        self.observation = np.asarray(self.observation, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        if self.observation.ndim != 2 or self.observation.shape[1] != FEATURE_DIM:
            raise ShapeError("observation must be (tau, 36)")
        if self.target.ndim != 2 or self.target.shape[1] != FEATURE_DIM:
            raise ShapeError("target must be (delta, 36)")
        if len(self.observation) < 1 or len(self.target) < 1:
            raise ShapeError("tau and delta must each be >= 1")
        total = len(self.observation) + len(self.target)
        if self.confidences.shape != (total, NUM_KEYPOINTS):
            raise ShapeError(f"confidences must be ({total}, 17)")

    @property
    def tau(self) -> int:
        return len(self.observation)

    @property
    def delta(self) -> int:
        return len(self.target)

    @property
    def target_frames(self) -> np.ndarray:
        first = self.start_frame + self.tau
        return np.arange(first, first + self.delta, dtype=np.int64)

    @property
    def target_confidences(self) -> np.ndarray:
        return self.confidences[self.tau :]

    def target_joints(self) -> np.ndarray:
        """Ground-truth target joints in pixels, (delta, 18, 2)."""
        scale = np.array([self.frame_width, self.frame_height])
        return bone_features_to_joints(self.target) * scale


def _validate_record(rec: dict, where: str) -> None:
    for key in ("video_id", "frame", "track_id", "width", "height", "keypoints"):
        if key not in rec:
            raise SchemaError(f"{where}: missing field {key!r}")
    kp = rec["keypoints"]
    if not isinstance(kp, list) or len(kp) != 3 * NUM_KEYPOINTS:
        n = len(kp) if isinstance(kp, list) else "non-list"
        raise SchemaError(
            f"{where}: keypoints must hold 51 numbers (17 joints), got {n}"
        )
    if not all(isinstance(v, (int, float)) and np.isfinite(v) for v in kp):
        raise SchemaError(f"{where}: keypoints must be finite numbers")
    if not isinstance(rec["frame"], int) or rec["frame"] < 0:
        raise SchemaError(f"{where}: frame must be a non-negative integer")
    w, h = rec["width"], rec["height"]
    if not isinstance(w, (int, float)) or not isinstance(h, (int, float)) \
            or w <= 0 or h <= 0:
        raise SchemaError(f"{where}: width/height must be positive")
    conf = kp[2::3]
    if min(conf) < 0.0 or max(conf) > 1.0:
        raise SchemaError(f"{where}: confidences must lie in [0, 1]")


def _iter_records(path: Path) -> Iterable[tuple[dict, str]]:
    text = path.read_text()
    stripped = text.lstrip()
    if not stripped:
        return
    if stripped[0] == "[":
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON array: {exc}") from exc
        if not isinstance(records, list):
            raise ParseError(f"{path}: top level must be an array of records")
        for i, rec in enumerate(records):
            if not isinstance(rec, dict):
                raise ParseError(f"{path}: record {i}: not a JSON object")
            yield rec, f"{path}: record {i}"
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            if not isinstance(rec, dict):
                raise ParseError(f"{path}: line {lineno}: not a JSON object")
            yield rec, f"{path}: line {lineno}"


def load_pose_file(path: str | Path) -> list[PoseSequence]:
    """Parse a pose-JSON file into per-(video, track) sequences.

    Tracks are split at any frame gap > 1; each resulting segment keeps the
    original track_id. Output order and content are independent of record
    order in the file. An empty file yields an empty list.

    Raises:
        ParseError: malformed JSON or duplicate (video, track, frame).
        SchemaError: a record parses but violates the schema.
    """
    path = Path(path)
    groups: dict[tuple[str, str], dict[int, tuple]] = {}
    dims: dict[str, tuple[float, float]] = {}
    for rec, where in _iter_records(path):
        _validate_record(rec, where)
        video = str(rec["video_id"])
        track = str(rec["track_id"])
        frame = rec["frame"]
        w, h = float(rec["width"]), float(rec["height"])
        if video in dims and dims[video] != (w, h):
            raise SchemaError(
                f"{where}: frame dims {w}x{h} conflict with earlier "
                f"{dims[video][0]}x{dims[video][1]} for video {video!r}"
            )
        dims[video] = (w, h)
        per_track = groups.setdefault((video, track), {})
        if frame in per_track:
            raise ParseError(
                f"{where}: duplicate frame {frame} for video {video!r} "
                f"track {track!r}"
            )
        kp = np.asarray(rec["keypoints"], dtype=np.float64).reshape(
            NUM_KEYPOINTS, 3
        )
        per_track[frame] = (kp[:, :2], kp[:, 2])
    sequences = []
    for (video, track) in sorted(groups):
        per_track = groups[(video, track)]
        frames = sorted(per_track)
        w, h = dims[video]
        # split into runs of consecutive frames
        runs: list[list[int]] = [[frames[0]]]
        for f in frames[1:]:
            if f == runs[-1][-1] + 1:
                runs[-1].append(f)
            else:
                runs.append([f])
        for run in runs:
            joints17 = np.stack([per_track[f][0] for f in run])
            conf = np.stack([per_track[f][1] for f in run])
            roots = joints17[:, _ROOT_SRC, :].mean(axis=1)
            joints = np.concatenate([joints17, roots[:, None, :]], axis=1)
            sequences.append(
                PoseSequence(
                    video_id=video,
                    track_id=track,
                    frames=np.asarray(run, dtype=np.int64),
                    joints=joints,
                    confidences=conf,
                    frame_width=w,
                    frame_height=h,
                )
            )
    return sequences


def write_pose_file(path: str | Path, sequences: Sequence[PoseSequence]) -> None:
    """Serialize sequences as JSON-Lines pose records (root joint omitted)."""
    path = Path(path)
    lines = []
    for seq in sequences:
        for i, frame in enumerate(seq.frames):
            kp = np.empty(3 * NUM_KEYPOINTS, dtype=np.float64)
            kp[0::3] = seq.joints[i, :NUM_KEYPOINTS, 0]
            kp[1::3] = seq.joints[i, :NUM_KEYPOINTS, 1]
            kp[2::3] = seq.confidences[i]
            rec = {
                "video_id": seq.video_id,
                "frame": int(frame),
                "track_id": seq.track_id,
                "width": seq.frame_width,
                "height": seq.frame_height,
                "keypoints": [round(float(v), 6) for v in kp],
            }
            lines.append(json.dumps(rec, sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def load_label_file(path: str | Path) -> dict[str, FrameLabelSet]:
    """Read a frame-label CSV into one FrameLabelSet per video.

    Frames must cover 0..N-1 for each video with no duplicates or holes.
    """
    path = Path(path)
    rows: dict[str, dict[int, tuple[int, int]]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"video_id", "frame", "label", "hr_mask"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise SchemaError(
                f"{path}: header must contain columns {sorted(required)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                video = row["video_id"]
                frame = int(row["frame"])
                label = int(row["label"])
                mask = int(row["hr_mask"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            if label not in (0, 1) or mask not in (0, 1):
                raise SchemaError(
                    f"{path}: line {lineno}: label and hr_mask must be 0/1"
                )
            per_video = rows.setdefault(video, {})
            if frame in per_video:
                raise ParseError(
                    f"{path}: line {lineno}: duplicate frame {frame} "
                    f"for video {video!r}"
                )
            per_video[frame] = (label, mask)
    out = {}
    for video, per_video in rows.items():
        n = len(per_video)
        if sorted(per_video) != list(range(n)):
            raise SchemaError(
                f"{path}: video {video!r} frames must cover 0..{n - 1}"
            )
        labels = np.array([per_video[f][0] for f in range(n)], dtype=np.int64)
        mask = np.array([per_video[f][1] for f in range(n)], dtype=bool)
        out[video] = FrameLabelSet(video, labels, hr_mask=mask)
    return out


def write_label_file(
    path: str | Path, label_sets: Iterable[FrameLabelSet]
) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["video_id", "frame", "label", "hr_mask"])
        for ls in label_sets:
            mask = ls.hr_mask if ls.hr_mask is not None else np.zeros(len(ls), bool)
            for frame in range(len(ls)):
                writer.writerow(
                    [ls.video_id, frame, int(ls.labels[frame]), int(mask[frame])]
                )


def make_windows(
    seq: PoseSequence, tau: int, delta: int, stride: int = 1
) -> list[WindowedSample]:
    """Slice a track into sliding windows of tau observed + delta target steps.

    Windows start at offsets 0, stride, 2*stride, ... while the full window
    fits; a track shorter than tau+delta yields no windows.
    """
    if tau < 1 or delta < 1:
        raise ConfigError(f"tau and delta must be >= 1, got {tau}, {delta}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    span = tau + delta
    n = len(seq)
    if n < span:
        return []
    scale = np.array([seq.frame_width, seq.frame_height], dtype=np.float64)
    features = joints_to_bone_features(seq.joints / scale)
    windows = []
    for off in range(0, n - span + 1, stride):
        windows.append(
            WindowedSample(
                video_id=seq.video_id,
                track_id=seq.track_id,
                start_frame=int(seq.frames[off]),
                frame_width=seq.frame_width,
                frame_height=seq.frame_height,
                observation=features[off : off + tau],
                target=features[off + tau : off + span],
                confidences=seq.confidences[off : off + span],
            )
        )
    return windows


def save_window_archive(
    path: str | Path,
    windows: Sequence[WindowedSample],
    tau: int,
    delta: int,
) -> None:
    """Write windows to a deterministic binary archive with a count manifest."""
    for w in windows:
        if w.tau != tau or w.delta != delta:
            raise ConfigError(
                f"window ({w.tau}, {w.delta}) does not match archive "
                f"({tau}, {delta})"
            )
    counts: dict[str, dict[str, int]] = {}
    for w in windows:
        per_video = counts.setdefault(w.video_id, {})
        per_video[w.track_id] = per_video.get(w.track_id, 0) + 1
    meta = {
        "kind": "window-archive",
        "tau": tau,
        "delta": delta,
        "count": len(windows),
        "counts": counts,
        "video_ids": [w.video_id for w in windows],
        "track_ids": [w.track_id for w in windows],
    }
    n = len(windows)
    arrays = {
        "observation": np.stack([w.observation for w in windows])
        if n else np.zeros((0, tau, FEATURE_DIM)),
        "target": np.stack([w.target for w in windows])
        if n else np.zeros((0, delta, FEATURE_DIM)),
        "confidences": np.stack([w.confidences for w in windows])
        if n else np.zeros((0, tau + delta, NUM_KEYPOINTS)),
        "start_frames": np.array(
            [w.start_frame for w in windows], dtype=np.int64
        ),
        "dims": np.array(
            [[w.frame_width, w.frame_height] for w in windows], dtype=np.float64
        ).reshape(n, 2),
    }
    write_container(path, WINDOW_MAGIC, meta, arrays)


def load_window_archive(
    path: str | Path,
) -> tuple[list[WindowedSample], dict]:
    """Read a window archive; returns (windows, manifest meta)."""
    meta, arrays = read_container(path, WINDOW_MAGIC)
    n = int(meta["count"])
    windows = []
    for i in range(n):
        windows.append(
            WindowedSample(
                video_id=meta["video_ids"][i],
                track_id=meta["track_ids"][i],
                start_frame=int(arrays["start_frames"][i]),
                frame_width=float(arrays["dims"][i, 0]),
                frame_height=float(arrays["dims"][i, 1]),
                observation=arrays["observation"][i],
                target=arrays["target"][i],
                confidences=arrays["confidences"][i],
            )
        )
    return windows, meta


@dataclass(frozen=True)
class AnomalySegment:
    """A labeled anomalous stretch [start, end) for one synthetic track."""

    kind: str       # one of ANOMALY_KINDS
    start: int
    end: int        # exclusive
    track: int = 0

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(
                f"anomaly kind must be one of {ANOMALY_KINDS}, got {self.kind!r}"
            )
        if self.start < 0 or self.end <= self.start:
            raise ConfigError(
                f"bad anomaly range [{self.start}, {self.end})"
            )


# walking-model proportions, as fractions of the body scale
_TORSO_HALF = 0.36
_SHOULDER_HALF = 0.16
_HIP_HALF = 0.11


def _track_joints(
    n_frames: int,
    rng: np.random.Generator,
    segments: Sequence[AnomalySegment],
    frame_width: float,
    frame_height: float,
) -> np.ndarray:
    """Simulate one walker; returns (n_frames, 17, 2) pixel keypoints."""
    s = rng.uniform(42.0, 68.0)
    y0 = rng.uniform(0.55, 0.72) * frame_height
    x = rng.uniform(0.2, 0.8) * frame_width
    facing = float(rng.choice([-1.0, 1.0]))
    speed = rng.uniform(1.2, 2.4)
    omega = rng.uniform(0.32, 0.44)
    arm_amp = 0.12 * s
    leg_amp = 0.16 * s
    phase0 = rng.uniform(0.0, 2.0 * np.pi)

    speed_mult = np.ones(n_frames)
    walk_omega_mult = np.ones(n_frames)
    arm_omega_mult = np.ones(n_frames)
    arm_amp_mult = np.ones(n_frames)
    jump_on = np.zeros(n_frames)
    for seg in segments:
        sl = slice(seg.start, min(seg.end, n_frames))
        if seg.kind == "run":
            speed_mult[sl] = 3.0
            walk_omega_mult[sl] = 3.0
        elif seg.kind == "flail":
            arm_amp_mult[sl] = 4.0
            arm_omega_mult[sl] = 3.0
        else:  # jump
            jump_on[sl] = 1.0

    walk_phase = phase0 + np.cumsum(omega * walk_omega_mult)
    arm_phase = phase0 + np.cumsum(omega * arm_omega_mult)
    jump_phase = np.cumsum(0.55 * jump_on)

    # root path; walkers bounce off frame margins
    margin = 0.12 * frame_width
    xs = np.empty(n_frames)
    for t in range(n_frames):
        x += facing * speed * speed_mult[t]
        if x < margin:
            x = 2.0 * margin - x
            facing = 1.0
        elif x > frame_width - margin:
            x = 2.0 * (frame_width - margin) - x
            facing = -1.0
        xs[t] = x
    bob = 1.5 * np.sin(2.0 * walk_phase)
    hop = -0.30 * s * np.abs(np.sin(jump_phase)) * jump_on
    ys = y0 + bob + hop

    lsw = np.sin(arm_phase + np.pi) * arm_amp * arm_amp_mult
    rsw = np.sin(arm_phase) * arm_amp * arm_amp_mult
    lleg = np.sin(walk_phase) * leg_amp
    rleg = np.sin(walk_phase + np.pi) * leg_amp

    joints = np.empty((n_frames, NUM_KEYPOINTS, 2))
    lsho = np.stack([xs - _SHOULDER_HALF * s, ys - _TORSO_HALF * s], axis=1)
    rsho = np.stack([xs + _SHOULDER_HALF * s, ys - _TORSO_HALF * s], axis=1)
    lhip = np.stack([xs - _HIP_HALF * s, ys + _TORSO_HALF * s], axis=1)
    rhip = np.stack([xs + _HIP_HALF * s, ys + _TORSO_HALF * s], axis=1)
    lelb = lsho + np.stack([0.7 * lsw, np.full(n_frames, 0.22 * s)], axis=1)
    relb = rsho + np.stack([0.7 * rsw, np.full(n_frames, 0.22 * s)], axis=1)
    lwri = lelb + np.stack([lsw, np.full(n_frames, 0.20 * s)], axis=1)
    rwri = relb + np.stack([rsw, np.full(n_frames, 0.20 * s)], axis=1)
    lkne = lhip + np.stack([0.8 * lleg, np.full(n_frames, 0.30 * s)], axis=1)
    rkne = rhip + np.stack([0.8 * rleg, np.full(n_frames, 0.30 * s)], axis=1)
    lank = lkne + np.stack([lleg, np.full(n_frames, 0.28 * s)], axis=1)
    rank = rkne + np.stack([rleg, np.full(n_frames, 0.28 * s)], axis=1)
    nose = np.stack([xs + 0.04 * s, ys - 0.52 * s], axis=1)
    leye = nose + np.array([-0.035 * s, -0.02 * s])
    reye = nose + np.array([0.035 * s, -0.02 * s])
    lear = leye + np.array([-0.045 * s, 0.02 * s])
    rear = reye + np.array([0.045 * s, 0.02 * s])

    for idx, arr in enumerate(
        [nose, leye, reye, lear, rear, lsho, rsho, lelb, relb,
         lwri, rwri, lhip, rhip, lkne, rkne, lank, rank]
    ):
        joints[:, idx, :] = arr
    joints += rng.normal(0.0, 0.5, size=joints.shape)
    return joints


def synth_gait(
    n_tracks: int,
    n_frames: int,
    anomaly_spec: Sequence[AnomalySegment] = (),
    rng_seed: int = 0,
    video_id: str = "synth-000",
    frame_width: float = 640.0,
    frame_height: float = 360.0,
) -> tuple[list[PoseSequence], FrameLabelSet]:
    """Generate one synthetic video of walking pedestrians.

    Normal motion is a constant-velocity sinusoidal limb-swing walk.
    Anomaly segments perturb one track each: "run" triples stride speed
    and cadence, "jump" adds vertical root oscillation, "flail" swings
    the arms at 4x amplitude and 3x frequency. Deterministic per seed.

    Returns:
        (sequences, labels): one PoseSequence per track plus frame labels
        that are 1 exactly on frames covered by an anomaly segment.
    """
    if n_tracks < 1 or n_frames < 1:
        raise ConfigError("n_tracks and n_frames must be >= 1")
    for seg in anomaly_spec:
        if seg.end > n_frames:
            raise ConfigError(
                f"anomaly segment [{seg.start}, {seg.end}) exceeds "
                f"{n_frames} frames"
            )
        if not 0 <= seg.track < n_tracks:
            raise ConfigError(f"anomaly track {seg.track} out of range")
    rng = np.random.default_rng(rng_seed)
    labels = np.zeros(n_frames, dtype=np.int64)
    for seg in anomaly_spec:
        labels[seg.start : seg.end] = 1
    sequences = []
    for track in range(n_tracks):
        segments = [s for s in anomaly_spec if s.track == track]
        joints17 = _track_joints(
            n_frames, rng, segments, frame_width, frame_height
        )
        conf = rng.uniform(0.75, 1.0, size=(n_frames, NUM_KEYPOINTS))
        roots = joints17[:, _ROOT_SRC, :].mean(axis=1)
        joints = np.concatenate([joints17, roots[:, None, :]], axis=1)
        sequences.append(
            PoseSequence(
                video_id=video_id,
                track_id=str(track),
                frames=np.arange(n_frames, dtype=np.int64),
                joints=joints,
                confidences=conf,
                frame_width=frame_width,
                frame_height=frame_height,
            )
        )
    label_set = FrameLabelSet(
        video_id, labels, hr_mask=np.zeros(n_frames, dtype=bool)
    )
    return sequences, label_set


def plan_anomalies(
    n_frames: int,
    n_tracks: int,
    fraction: float,
    rng: np.random.Generator,
) -> list[AnomalySegment]:
    """Choose non-overlapping anomaly segments covering round(fraction * n_frames) frames.

    Segment kinds, lengths (12..25 frames), placements, and target tracks
    are drawn from rng. Segments never overlap in time, so the labeled
    fraction is exact up to rounding.
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"anomaly fraction must be in [0, 1), got {fraction}")
    want = int(round(fraction * n_frames))
    free = [(0, n_frames)]  # disjoint [start, end) intervals still available
    segments: list[AnomalySegment] = []
    while want > 0 and free:
        length = min(want, int(rng.integers(12, 26)))
        fits = [iv for iv in free if iv[1] - iv[0] >= length]
        if not fits:
            length = max(iv[1] - iv[0] for iv in free)
            fits = [iv for iv in free if iv[1] - iv[0] >= length]
        lo, hi = fits[int(rng.integers(len(fits)))]
        start = int(rng.integers(lo, hi - length + 1))
        kind = ANOMALY_KINDS[int(rng.integers(len(ANOMALY_KINDS)))]
        track = int(rng.integers(n_tracks))
        segments.append(AnomalySegment(kind, start, start + length, track))
        free.remove((lo, hi))
        if start > lo:
            free.append((lo, start))
        if start + length < hi:
            free.append((start + length, hi))
        free.sort()
        want -= length
    return segments
