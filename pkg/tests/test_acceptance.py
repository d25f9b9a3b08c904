"""Acceptance gate: eight numbered checks, one pass/fail line each.

Each test prints "[criterion N] PASS/FAIL: ..." with capture lifted so
the lines reach the real terminal, then asserts.
"""

import json
import pathlib
import time

import numpy as np
import pytest
import torch

from gradcheck import INSTANCE_BUILDERS, REL_TOL, check_instance
from poseguard import data
from poseguard.anomaly import roc_auc
from poseguard.predictor import (
    PosePredictor,
    PredictorConfig,
    load_checkpoint,
    save_checkpoint,
)
from poseguard.skeleton import (
    bone_features_to_joints,
    endpoint_track_indices,
    joints_to_bone_features,
)
from poseguard.training import (
    TrainConfig,
    evaluate_checkpoint,
    predict_windows,
    score_windows,
    train,
)

REPO_ROOT = pathlib.Path(__file__).resolve().parent.parent

# joint -> parent, 1-based, root = 18; used by the independent
# recomputations below so they share no topology code with the package
PARENT_1B = {1: 18, 2: 1, 3: 1, 4: 2, 5: 3, 6: 18, 7: 18, 8: 6, 9: 7,
             10: 8, 11: 9, 12: 18, 13: 18, 14: 12, 15: 13, 16: 14, 17: 15}
DECODE_ORDER = [1, 6, 7, 12, 13, 2, 3, 8, 9, 14, 15, 4, 5, 10, 11, 16, 17]


@pytest.fixture
def report(capfd):
    def _report(n, ok, text):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {text}"
        with capfd.disabled():
            print(line, flush=True)
        assert ok, line

    return _report


# ------------------------------------------------------- 1: documentation


def test_benchmark_numbers_documented_not_asserted(report):
    readme = (REPO_ROOT / "README.md").read_text()
    numbers = ["0.802", "0.870", "0.737", "0.749"]
    have_all = all(v in readme for v in numbers)
    flagged = "extended-run" in readme and "not reproducible at desk scale" in readme
    report(
        1, have_all and flagged,
        "reference benchmark AUCs (0.802/0.870/0.737/0.749) documented "
        "as extended-run targets only",
    )


# ------------------------------------------------------- 2: gradient suite


def test_loss_gradients_match_finite_differences(report):
    t0 = time.monotonic()
    worst = 0.0
    for name, build in sorted(INSTANCE_BUILDERS.items()):
        rng = np.random.default_rng(hash(name) % 2**32)
        for _ in range(20):
            fn, leaves = build(rng, batch=1)
            worst = max(worst, check_instance(fn, leaves))
    elapsed = time.monotonic() - t0
    report(
        2, worst < REL_TOL and elapsed < 60.0,
        f"analytic vs central-difference gradients on 20 instances per "
        f"term: worst rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)",
    )


# ------------------------------------------------------- 3: geometry suite


def test_geometry_identities(report):
    rng = np.random.default_rng(42)
    scale = np.array([640.0, 360.0])

    joints = rng.uniform(0.0, 1.0, (1000, 18, 2))
    back = bone_features_to_joints(joints_to_bone_features(joints))
    round_trip_px = float(np.abs((back - joints) * scale).max())

    tracks = endpoint_track_indices()
    tele_err = 0.0
    trans_err = 0.0
    for pose in joints[:200]:
        for children, parents in tracks.values():
            s = np.zeros(2)
            for c, p in zip(children, parents):
                s = s + (pose[c] - pose[p])
            tele_err = max(
                tele_err, float(np.abs(s - (pose[children[-1]] - pose[17])).max())
            )
    shifts = rng.uniform(-0.5, 0.5, (50, 1, 2))
    base = joints[:50]
    feats_a = joints_to_bone_features(base)
    feats_b = joints_to_bone_features(base + shifts)
    # bones n=1..17 occupy feature slots 2..35; slots 0..1 are the root
    trans_err = float(np.abs(feats_b[:, 2:] - feats_a[:, 2:]).max())
    for pose, shift in zip(base, shifts):
        for children, parents in tracks.values():
            s0 = sum(pose[c] - pose[p] for c, p in zip(children, parents))
            s1 = sum(
                (pose[c] + shift[0]) - (pose[p] + shift[0])
                for c, p in zip(children, parents)
            )
            trans_err = max(trans_err, float(np.abs(s1 - s0).max()))

    ok = round_trip_px <= 1e-9 and tele_err <= 1e-12 and trans_err <= 1e-12
    report(
        3, ok,
        f"pose<->bone round trip {round_trip_px:.2e} px (<= 1e-9), endpoint "
        f"telescoping {tele_err:.2e} (<= 1e-12), translation cancellation "
        f"{trans_err:.2e} (<= 1e-12)",
    )


# ------------------------------------------------------- 4: AUC oracle


def _pair_count_auc(scores, labels):
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    wins = (pos > neg).sum()
    ties = (pos == neg).sum()
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def test_roc_auc_matches_pair_counting(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 1001))
        labels = rng.integers(0, 2, n)
        while labels.min() == labels.max():
            labels = rng.integers(0, 2, n)
        scores = rng.normal(0.0, 1.0, n)
        if rng.random() < 0.5:
            scores = np.round(scores, 1)  # force ties
        worst = max(worst, abs(roc_auc(scores, labels) - _pair_count_auc(scores, labels)))
    fixture = roc_auc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1]))
    ok = worst <= 1e-9 and fixture == 0.75
    report(
        4, ok,
        f"rank AUC vs pair counting on 100 instances: worst diff "
        f"{worst:.2e} (<= 1e-9); fixture = {fixture} (== 0.75)",
    )


# ------------------------------------------------------- 5: pipeline oracle


def _decode_px(feats, width, height):
    # decode in the features' own dtype, then scale in float64
    joints = np.empty((feats.shape[0], 18, 2), dtype=feats.dtype)
    joints[:, 17] = feats[:, 0:2]
    for n in DECODE_ORDER:
        p = PARENT_1B[n]
        joints[:, n - 1] = joints[:, p - 1] - feats[:, 2 * n : 2 * n + 2]
    return joints * np.array([width, height])


def _straight_line_scores(windows, features, n_frames, mode):
    """Frame scores recomputed with plain loops (no pipeline code)."""
    per_track = {}
    for w, feats in zip(windows, features):
        pred_px = _decode_px(feats, w.frame_width, w.frame_height)
        gt_px = _decode_px(w.target, w.frame_width, w.frame_height)
        conf = np.asarray(w.confidences[3:], dtype=np.float64)
        sq = ((np.asarray(gt_px, dtype=np.float64)[:, :17]
               - np.asarray(pred_px, dtype=np.float64)[:, :17]) ** 2
              ).sum(axis=-1)
        errs = (conf * sq).sum(axis=-1)
        per_track.setdefault((w.video_id, w.track_id), []).append(
            (list(w.target_frames), errs)
        )
    per_video = {v: {} for v in n_frames}
    for (video, track) in sorted(per_track):
        contributions = {}
        for frames, errs in sorted(per_track[(video, track)],
                                   key=lambda fe: fe[0][0]):
            if mode == "summed":
                value = float(np.sum(errs))
                for f in frames:
                    contributions.setdefault(int(f), []).append(value)
            else:
                for f, e in zip(frames, errs):
                    contributions.setdefault(int(f), []).append(float(e))
        for f, values in contributions.items():
            per_video[video].setdefault(f, []).append(float(np.mean(values)))
    out = {}
    for video, count in n_frames.items():
        scores = np.zeros(count, dtype=np.float64)
        covered = np.zeros(count, dtype=bool)
        for f, values in per_video[video].items():
            scores[f] = max(values)
            covered[f] = True
        fill = float(scores[covered].min()) if covered.any() else 0.0
        scores[~covered] = fill
        return_covered = covered
        out[video] = (scores, return_covered)
    return out


def test_windowed_scores_match_straight_line_recount(report):
    segs = [data.AnomalySegment(kind="flail", start=8, end=14, track=1)]
    seqs, labels = data.synth_gait(4, 20, anomaly_spec=segs, rng_seed=33,
                                   video_id="micro")
    windows = [w for s in seqs for w in data.make_windows(s, 3, 3, 1)]
    torch.manual_seed(5)
    model = PosePredictor(PredictorConfig(tau=3, delta=3, encoder_hidden=32,
                                          latent_dim=4, decoder_hidden=32))
    features = predict_windows(model, windows)
    labels_map = {"micro": labels}
    n_frames = {"micro": len(labels)}
    ok = True
    detail = []
    for mode in ("summed", "flattened"):
        series, _ = score_windows(model, windows, labels_map,
                                  error_mode=mode, features=features)
        recount = _straight_line_scores(windows, features, n_frames, mode)
        for video in n_frames:
            a = series[video]
            b_scores, b_covered = recount[video]
            same = (np.array_equal(a.scores, b_scores)
                    and np.array_equal(a.covered, b_covered))
            ok = ok and same
            detail.append(f"{mode}: {'exact' if same else 'MISMATCH'}")
    report(
        5, ok,
        "windowed pipeline vs straight-line recomputation on a 4-track "
        "micro-dataset, " + ", ".join(detail),
    )


# ------------------------------------------------------- 6: overfit check


def test_overfit_drives_trajectory_l2_down(report, tmp_path):
    seqs, _ = data.synth_gait(1, 16, rng_seed=7)
    windows = data.make_windows(seqs[0], 3, 3, 1)[:10]
    pc = PredictorConfig(tau=3, delta=3, encoder_hidden=128, latent_dim=1,
                         decoder_hidden=128)
    tc = TrainConfig(tau=3, delta=3, batch_size=16, epochs=2000,
                     base_lr=0.01, plateau_patience=100, rng_seed=3,
                     enabled_losses=frozenset())
    train(tc, windows, predictor_config=pc, out_dir=tmp_path)
    records = [json.loads(line)
               for line in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    finite = all(
        np.isfinite(v) for rec in records for v in rec.values()
        if isinstance(v, (int, float))
    )
    curve = [rec["traj_l2"] for rec in records]
    best = min(curve)
    crossing = next((rec["step"] for rec, v in zip(records, curve) if v < 1e-3),
                    None)
    ok = finite and best < 1e-3 and crossing is not None and crossing <= 2000
    report(
        6, ok,
        f"10-window overfit: trajectory L2 min {best:.2e} (< 1e-3), first "
        f"crossing at step {crossing} (<= 2000), {len(records)} logged "
        f"steps all finite: {finite}",
    )


# ------------------------------------- 7 + 8: synthetic detection runs


PC_DETECT = PredictorConfig(tau=3, delta=3, encoder_hidden=128,
                            latent_dim=8, decoder_hidden=128)


def _detection_train_windows():
    seqs, _ = data.synth_gait(200, 40, rng_seed=100, video_id="train")
    return [w for s in seqs for w in data.make_windows(s, 3, 3, 1)]


def _detection_test_set():
    windows, labels = [], {}
    for v in range(2):
        vid = f"norm{v}"
        seqs, ls = data.synth_gait(6, 80, rng_seed=900 + v, video_id=vid)
        labels[vid] = ls
        windows += [w for s in seqs for w in data.make_windows(s, 3, 3, 1)]
    for v in range(3):
        segs = [data.AnomalySegment(kind="flail", start=0, end=40, track=i)
                for i in range(3)]
        vid = f"anom{v}"
        seqs, ls = data.synth_gait(6, 40, anomaly_spec=segs,
                                   rng_seed=910 + v, video_id=vid)
        labels[vid] = ls
        windows += [w for s in seqs for w in data.make_windows(s, 3, 3, 1)]
    return windows, labels


def _train_and_score(mask, out_dir, train_windows, test_windows, labels):
    cfg = TrainConfig(tau=3, delta=3, batch_size=256, epochs=120,
                      rng_seed=11, enabled_losses=mask)
    model, _ = train(cfg, train_windows, predictor_config=PC_DETECT,
                     out_dir=out_dir)
    report = evaluate_checkpoint(model, test_windows, labels,
                                 error_mode="summed")
    return report


@pytest.fixture(scope="module")
def detection_runs(tmp_path_factory):
    t0 = time.monotonic()
    train_windows = _detection_train_windows()
    test_windows, labels = _detection_test_set()
    runs = {}
    for name, mask in (("endpoint", frozenset({"E"})), ("none", frozenset())):
        out = tmp_path_factory.mktemp(f"run-{name}")
        runs[name] = {
            "report": _train_and_score(mask, out, train_windows,
                                       test_windows, labels),
            "checkpoint": out / "checkpoint.bin",
        }
    runs["elapsed"] = time.monotonic() - t0
    out = tmp_path_factory.mktemp("run-endpoint-repeat")
    runs["endpoint-repeat"] = {
        "report": _train_and_score(frozenset({"E"}), out, train_windows,
                                   test_windows, labels),
        "checkpoint": out / "checkpoint.bin",
    }
    return runs


def test_synthetic_detection_end_to_end(report, detection_runs):
    auc_e = detection_runs["endpoint"]["report"]["auc"]
    auc_none = detection_runs["none"]["report"]["auc"]
    elapsed = detection_runs["elapsed"]
    ok = auc_e >= 0.90 and auc_e >= auc_none and elapsed <= 900.0
    report(
        7, ok,
        f"endpoint-loss config AUC {auc_e:.4f} (>= 0.90) vs trajectory-only "
        f"{auc_none:.4f} (endpoint >= none), both runs in {elapsed:.0f}s "
        f"(<= 900s)",
    )


def test_detection_run_is_reproducible(report, detection_runs, tmp_path):
    a = detection_runs["endpoint"]
    b = detection_runs["endpoint-repeat"]
    auc_a, auc_b = a["report"]["auc"], b["report"]["auc"]
    same_auc = auc_a == auc_b and f"{auc_a:.12f}" == f"{auc_b:.12f}"
    bytes_a = a["checkpoint"].read_bytes()
    same_ckpt = bytes_a == b["checkpoint"].read_bytes()
    model, meta = load_checkpoint(a["checkpoint"])
    resaved = tmp_path / "resaved.bin"
    save_checkpoint(resaved, model, step=meta["step"],
                    rng_seed=meta["rng_seed"], extra=meta.get("extra"))
    round_trip = resaved.read_bytes() == bytes_a
    ok = same_auc and same_ckpt and round_trip
    report(
        8, ok,
        f"same-seed repeat AUC {auc_b:.12f} == {auc_a:.12f}; trained "
        f"checkpoints byte-identical: {same_ckpt}; load->save round trip "
        f"byte-identical: {round_trip}",
    )
