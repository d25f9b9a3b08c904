"""Pose loading, windowing, archives, and the synthetic gait generator."""

import hashlib
import json

import numpy as np
import pytest

from poseguard import data
from poseguard.errors import ConfigError, ParseError, SchemaError
from poseguard.skeleton import joints_to_bone_features


def record(video, frame, track, kps, width=640, height=360):
    flat = []
    for x, y in kps:
        flat += [float(x), float(y), 0.9]
    return {"video_id": video, "frame": frame, "track_id": track,
            "width": width, "height": height, "keypoints": flat}


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def grid_pose(rng):
    return rng.uniform(10, 300, size=(17, 2))


# ---------------------------------------------------------------- loading


def test_load_single_track(tmp_path):
    rng = np.random.default_rng(0)
    recs = [record("v", f, "t0", grid_pose(rng)) for f in range(3)]
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, recs)
    seqs = data.load_pose_file(path)
    assert len(seqs) == 1
    seq = seqs[0]
    assert seq.video_id == "v"
    assert seq.track_id == "t0"
    assert list(seq.frames) == [0, 1, 2]
    assert seq.joints.shape == (3, 18, 2)


def test_frame_gap_splits_track(tmp_path):
    rng = np.random.default_rng(1)
    recs = [record("v", f, "t0", grid_pose(rng)) for f in (1, 2, 3, 7, 8)]
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, recs)
    seqs = data.load_pose_file(path)
    assert [len(s.frames) for s in seqs] == [3, 2]
    assert list(seqs[0].frames) == [1, 2, 3]
    assert list(seqs[1].frames) == [7, 8]
    assert seqs[0].track_id == seqs[1].track_id == "t0"


def test_record_order_is_irrelevant(tmp_path):
    rng = np.random.default_rng(2)
    recs = [record("v", f, t, grid_pose(rng))
            for t in ("a", "b") for f in range(5)]
    p1 = tmp_path / "fwd.jsonl"
    p2 = tmp_path / "rev.jsonl"
    write_jsonl(p1, recs)
    write_jsonl(p2, recs[::-1])
    s1 = data.load_pose_file(p1)
    s2 = data.load_pose_file(p2)
    assert len(s1) == len(s2) == 2
    for a, b in zip(s1, s2):
        assert a.video_id == b.video_id and a.track_id == b.track_id
        assert np.array_equal(a.joints, b.joints)


def test_json_array_form_accepted(tmp_path):
    rng = np.random.default_rng(3)
    recs = [record("v", f, "t", grid_pose(rng)) for f in range(4)]
    path = tmp_path / "poses.json"
    path.write_text(json.dumps(recs))
    assert len(data.load_pose_file(path)[0].frames) == 4


def test_empty_file_gives_no_sequences(tmp_path):
    path = tmp_path / "poses.jsonl"
    path.write_text("")
    assert data.load_pose_file(path) == []


def test_malformed_line_reports_position(tmp_path):
    path = tmp_path / "poses.jsonl"
    rng = np.random.default_rng(4)
    write_jsonl(path, [record("v", 0, "t", grid_pose(rng))])
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(ParseError) as err:
        data.load_pose_file(path)
    assert "2" in str(err.value)


def test_wrong_keypoint_count_rejected(tmp_path):
    rng = np.random.default_rng(5)
    rec = record("v", 0, "t", grid_pose(rng))
    rec["keypoints"] = rec["keypoints"][:-3]
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, [rec])
    with pytest.raises(SchemaError):
        data.load_pose_file(path)


def test_confidence_out_of_range_rejected(tmp_path):
    rng = np.random.default_rng(6)
    rec = record("v", 0, "t", grid_pose(rng))
    rec["keypoints"][2] = 1.5
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, [rec])
    with pytest.raises(SchemaError):
        data.load_pose_file(path)


def test_duplicate_frame_rejected(tmp_path):
    rng = np.random.default_rng(7)
    recs = [record("v", 0, "t", grid_pose(rng)),
            record("v", 0, "t", grid_pose(rng))]
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, recs)
    with pytest.raises(ParseError):
        data.load_pose_file(path)


def test_conflicting_video_dims_rejected(tmp_path):
    rng = np.random.default_rng(8)
    recs = [record("v", 0, "t", grid_pose(rng), width=640),
            record("v", 1, "t", grid_pose(rng), width=641)]
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, recs)
    with pytest.raises(SchemaError):
        data.load_pose_file(path)


def test_root_joint_synthesized_on_load(tmp_path):
    rng = np.random.default_rng(9)
    kps = grid_pose(rng)
    path = tmp_path / "poses.jsonl"
    write_jsonl(path, [record("v", 0, "t", kps)])
    seq = data.load_pose_file(path)[0]
    expect = kps[[5, 6, 11, 12]].mean(axis=0)
    assert np.allclose(seq.joints[0, 17], expect)


def test_pose_file_round_trip(tmp_path):
    seqs, _ = data.synth_gait(2, 12, rng_seed=0)
    path = tmp_path / "poses.jsonl"
    data.write_pose_file(path, seqs)
    back = data.load_pose_file(path)
    assert len(back) == len(seqs)
    for a, b in zip(seqs, back):
        assert a.video_id == b.video_id and a.track_id == b.track_id
        assert np.array_equal(a.frames, b.frames)
        # serialized at 6 decimals; root is re-derived from the written wrists
        assert np.abs(a.joints - b.joints).max() < 1e-5


# ---------------------------------------------------------------- labels


def test_label_round_trip(tmp_path):
    labels = {
        "a": data.FrameLabelSet(
            video_id="a",
            labels=np.array([0, 0, 1, 1, 0], dtype=np.int64),
            hr_mask=np.array([0, 1, 0, 0, 0], dtype=bool)),
        "b": data.FrameLabelSet(
            video_id="b", labels=np.zeros(3, dtype=np.int64)),
    }
    path = tmp_path / "labels.csv"
    data.write_label_file(path, labels.values())
    back = data.load_label_file(path)
    assert set(back) == {"a", "b"}
    assert np.array_equal(back["a"].labels, labels["a"].labels)
    assert np.array_equal(back["a"].hr_mask, labels["a"].hr_mask)
    assert np.array_equal(back["b"].labels, labels["b"].labels)


def test_label_frames_must_be_contiguous(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("video_id,frame,label,hr_mask\nv,0,0,0\nv,2,1,0\n")
    with pytest.raises(SchemaError):
        data.load_label_file(path)


def test_label_duplicate_frame_rejected(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("video_id,frame,label,hr_mask\nv,0,0,0\nv,0,1,0\n")
    with pytest.raises(ParseError):
        data.load_label_file(path)


def test_label_bad_value_rejected(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("video_id,frame,label,hr_mask\nv,0,2,0\n")
    with pytest.raises(SchemaError):
        data.load_label_file(path)


# ---------------------------------------------------------------- windows


def window_count(n, tau, delta, stride):
    span = tau + delta
    return 0 if n < span else (n - span) // stride + 1


def test_window_counting_law():
    seqs, _ = data.synth_gait(1, 10, rng_seed=0)
    assert len(data.make_windows(seqs[0], 3, 3, 1)) == 5
    assert len(data.make_windows(seqs[0], 3, 3, 2)) == 3
    seqs6, _ = data.synth_gait(1, 6, rng_seed=0)
    assert len(data.make_windows(seqs6[0], 3, 3, 1)) == 1
    seqs5, _ = data.synth_gait(1, 5, rng_seed=0)
    assert data.make_windows(seqs5[0], 3, 3, 1) == []


def test_window_counting_random_instances():
    rng = np.random.default_rng(10)
    for _ in range(25):
        n = int(rng.integers(1, 60))
        tau = int(rng.integers(1, 6))
        delta = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 4))
        seqs, _ = data.synth_gait(1, max(n, 1), rng_seed=0)
        wins = data.make_windows(seqs[0], tau, delta, stride)
        assert len(wins) == window_count(n, tau, delta, stride)


def test_window_parameters_validated():
    seqs, _ = data.synth_gait(1, 10, rng_seed=0)
    for bad in ((0, 3, 1), (3, 0, 1), (3, 3, 0)):
        with pytest.raises(ConfigError):
            data.make_windows(seqs[0], *bad)


def test_window_features_match_source_joints():
    seqs, _ = data.synth_gait(1, 12, rng_seed=1)
    seq = seqs[0]
    wins = data.make_windows(seq, 3, 3, 2)
    scale = np.array([seq.frame_width, seq.frame_height])
    for win in wins:
        i = int(np.where(seq.frames == win.start_frame)[0][0])
        feats = joints_to_bone_features(seq.joints[i:i + 6] / scale)
        assert np.allclose(win.observation, feats[:3], atol=1e-12)
        assert np.allclose(win.target, feats[3:], atol=1e-12)
        # px reconstruction of the target side
        back = win.target_joints()
        assert np.abs(back - seq.joints[i + 3:i + 6]).max() <= 1e-9


def test_window_target_frames_property():
    seqs, _ = data.synth_gait(1, 10, rng_seed=2)
    win = data.make_windows(seqs[0], 3, 2, 1)[0]
    start = int(seqs[0].frames[0])
    assert list(win.target_frames) == [start + 3, start + 4]
    assert win.tau == 3 and win.delta == 2


# ---------------------------------------------------------------- archives


def test_archive_round_trip(tmp_path):
    seqs, _ = data.synth_gait(3, 14, rng_seed=3)
    wins = []
    for seq in seqs:
        wins += data.make_windows(seq, 3, 3, 1)
    path = tmp_path / "wins.bin"
    data.save_window_archive(path, wins, tau=3, delta=3)
    back, meta = data.load_window_archive(path)
    assert meta["tau"] == 3 and meta["delta"] == 3
    assert meta["count"] == len(wins)
    assert len(back) == len(wins)
    for a, b in zip(wins, back):
        assert a.video_id == b.video_id and a.track_id == b.track_id
        assert a.start_frame == b.start_frame
        assert np.array_equal(a.observation, b.observation)
        assert np.array_equal(a.target, b.target)
        assert np.array_equal(a.confidences, b.confidences)
        assert a.frame_width == b.frame_width


def test_archive_checksum_is_idempotent(tmp_path):
    seqs, _ = data.synth_gait(2, 10, rng_seed=4)
    wins = data.make_windows(seqs[0], 3, 3, 1)
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    data.save_window_archive(a, wins, tau=3, delta=3)
    data.save_window_archive(b, wins, tau=3, delta=3)
    ha = hashlib.sha256(a.read_bytes()).hexdigest()
    hb = hashlib.sha256(b.read_bytes()).hexdigest()
    assert ha == hb


def test_archive_rejects_mismatched_windows(tmp_path):
    seqs, _ = data.synth_gait(1, 12, rng_seed=5)
    wins = data.make_windows(seqs[0], 3, 3, 1)
    with pytest.raises(ConfigError):
        data.save_window_archive(tmp_path / "x.bin", wins, tau=3, delta=2)


def test_empty_archive_round_trip(tmp_path):
    path = tmp_path / "wins.bin"
    data.save_window_archive(path, [], tau=3, delta=3)
    back, meta = data.load_window_archive(path)
    assert back == [] and meta["count"] == 0


# ---------------------------------------------------------------- synthesis


def test_synth_is_deterministic():
    a_seqs, a_labels = data.synth_gait(3, 20, rng_seed=11)
    b_seqs, b_labels = data.synth_gait(3, 20, rng_seed=11)
    assert len(a_seqs) == len(b_seqs) == 3
    for a, b in zip(a_seqs, b_seqs):
        assert np.array_equal(a.joints, b.joints)
        assert np.array_equal(a.confidences, b.confidences)
    assert np.array_equal(a_labels.labels, b_labels.labels)
    c_seqs, _ = data.synth_gait(3, 20, rng_seed=12)
    assert not np.array_equal(a_seqs[0].joints, c_seqs[0].joints)


def test_synth_shapes_and_ranges():
    seqs, labels = data.synth_gait(2, 30, rng_seed=13)
    assert len(labels.labels) == 30
    for seq in seqs:
        assert seq.joints.shape == (30, 18, 2)
        assert np.isfinite(seq.joints).all()
        assert seq.confidences.min() >= 0.75
        assert seq.confidences.max() < 1.0
        assert list(seq.frames) == list(range(30))


def test_synth_labels_follow_segments():
    seg = data.AnomalySegment(kind="flail", start=8, end=14, track=0)
    _, labels = data.synth_gait(1, 20, anomaly_spec=[seg], rng_seed=14)
    expect = np.zeros(20, dtype=np.int64)
    expect[8:14] = 1
    assert np.array_equal(labels.labels, expect)


def test_synth_no_anomalies_means_all_zero_labels():
    _, labels = data.synth_gait(2, 15, rng_seed=15)
    assert labels.labels.sum() == 0


def test_anomaly_segment_validation():
    with pytest.raises(ConfigError):
        data.AnomalySegment(kind="swim", start=0, end=5, track=0)
    with pytest.raises(ConfigError):
        data.AnomalySegment(kind="run", start=5, end=5, track=0)
    with pytest.raises(ConfigError):
        data.AnomalySegment(kind="run", start=-1, end=5, track=0)


def test_segment_changes_motion_only_inside_its_span():
    seg = data.AnomalySegment(kind="run", start=10, end=18, track=0)
    plain, _ = data.synth_gait(1, 24, rng_seed=16)
    spiked, _ = data.synth_gait(1, 24, anomaly_spec=[seg], rng_seed=16)
    # identical dynamics before the segment starts
    assert np.allclose(plain[0].joints[:10], spiked[0].joints[:10])
    assert not np.allclose(plain[0].joints[10:18], spiked[0].joints[10:18])


def test_plan_anomalies_hits_requested_fraction():
    rng = np.random.default_rng(17)
    n_frames = 200
    for fraction in (0.1, 0.25):
        segs = data.plan_anomalies(n_frames, 3, fraction, rng)
        labeled = np.zeros(n_frames, dtype=bool)
        for seg in segs:
            assert 0 <= seg.start < seg.end <= n_frames
            assert not labeled[seg.start:seg.end].any()  # no overlap
            labeled[seg.start:seg.end] = True
        assert labeled.sum() == round(fraction * n_frames)
