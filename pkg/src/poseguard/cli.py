"""Command-line pipeline: synth, prepare, train, score, eval, plot.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
error. Every command writes a resolved-config YAML next to its outputs
so a run can be reproduced from its artifacts alone.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from .anomaly import (
    read_score_csv,
    roc_auc,
    write_metric_report,
    write_score_csv,
)
from .data import (
    load_label_file,
    load_pose_file,
    load_window_archive,
    make_windows,
    plan_anomalies,
    save_window_archive,
    synth_gait,
    write_label_file,
    write_pose_file,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateLabelsError,
    NumericError,
    PoseGuardError,
)
from .losses import LossWeights
from .predictor import PredictorConfig, load_checkpoint
from .training import TrainConfig, score_windows, train

_LOSS_LETTERS = frozenset("BEJ")


def _parse_losses(text: str) -> frozenset:
    """Parse --losses values: all, none, or a subset of the letters B, E, J."""
    t = text.strip().lower()
    if t == "all":
        return _LOSS_LETTERS
    if t == "none":
        return frozenset()
    letters = frozenset(c.upper() for c in text.replace(",", "") if c.strip())
    if not letters or not letters <= _LOSS_LETTERS:
        raise ConfigError(
            f"--losses must be all, none, or letters from B/E/J, got {text!r}"
        )
    return letters


def _require_paths(*paths: Path) -> None:
    for p in paths:
        if not Path(p).exists():
            raise ConfigError(f"path does not exist: {p}")


def _write_run_config(directory: Path, command: str, resolved: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    out = directory / f"{command}-config.yaml"
    out.write_text(yaml.safe_dump(resolved, sort_keys=True))


def _resolve_timescale(args) -> tuple[int, int]:
    if args.timescale is not None:
        if args.tau is not None or args.delta is not None:
            raise ConfigError("--timescale conflicts with --tau/--delta")
        return args.timescale, args.timescale
    if args.tau is None and args.delta is None:
        return 3, 3
    if args.tau is None or args.delta is None:
        raise ConfigError("--tau and --delta must be given together")
    return args.tau, args.delta


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sequences, label_sets = [], []
    for v in range(args.videos):
        base = args.seed + 7919 * v
        plan_rng = np.random.default_rng(base + 1)
        segments = plan_anomalies(
            args.frames, args.tracks, args.anomaly_fraction, plan_rng
        )
        video_id = f"{args.prefix}-{v:03d}"
        seqs, labels = synth_gait(
            args.tracks, args.frames, segments, rng_seed=base,
            video_id=video_id, frame_width=args.width,
            frame_height=args.height,
        )
        sequences.extend(seqs)
        label_sets.append(labels)
    write_pose_file(out / "poses.jsonl", sequences)
    write_label_file(out / "labels.csv", label_sets)
    _write_run_config(out, "synth", {
        "command": "synth",
        "out": str(out),
        "videos": args.videos,
        "tracks": args.tracks,
        "frames": args.frames,
        "anomaly_fraction": args.anomaly_fraction,
        "seed": args.seed,
        "width": args.width,
        "height": args.height,
        "prefix": args.prefix,
    })
    labeled = sum(int(ls.labels.sum()) for ls in label_sets)
    total = sum(len(ls) for ls in label_sets)
    print(
        f"wrote {out / 'poses.jsonl'} ({args.videos} videos, "
        f"{args.tracks} tracks each) and labels.csv "
        f"({labeled}/{total} frames anomalous)"
    )
    return 0


def cmd_prepare(args) -> int:
    src = Path(args.poses)
    _require_paths(src)
    tau, delta = _resolve_timescale(args)
    if src.is_dir():
        files = sorted(
            p for p in src.iterdir()
            if p.suffix in (".json", ".jsonl") and p.is_file()
        )
    else:
        files = [src]
    sequences = []
    for f in files:
        sequences.extend(load_pose_file(f))
    sequences.sort(key=lambda s: (s.video_id, s.track_id, int(s.frames[0])))
    windows = []
    for seq in sequences:
        windows.extend(make_windows(seq, tau, delta, stride=args.stride))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_window_archive(out, windows, tau, delta)
    _write_run_config(out.parent, "prepare", {
        "command": "prepare",
        "poses": str(src),
        "out": str(out),
        "tau": tau,
        "delta": delta,
        "stride": args.stride,
    })
    if not windows:
        print("warning: no windows produced (tracks shorter than tau+delta?)",
              file=sys.stderr)
    print(f"wrote {out}: {len(windows)} windows (tau={tau}, delta={delta})")
    return 0


def cmd_train(args) -> int:
    archive = Path(args.windows)
    _require_paths(archive)
    windows, meta = load_window_archive(archive)
    tau, delta = int(meta["tau"]), int(meta["delta"])
    if args.timescale is not None and args.timescale != tau:
        raise ConfigError(
            f"--timescale {args.timescale} does not match archive tau {tau}"
        )
    weights = LossWeights(alpha=args.alpha, beta=args.beta, gamma=args.gamma)
    config = TrainConfig(
        tau=tau,
        delta=delta,
        batch_size=args.batch_size,
        epochs=args.epochs,
        base_lr=args.lr,
        lr_decay_factor=args.lr_decay_factor,
        plateau_patience=args.plateau_patience,
        weights=weights,
        enabled_losses=_parse_losses(args.losses),
        rng_seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        grad_clip=None if args.no_grad_clip else args.grad_clip,
    )
    predictor_config = PredictorConfig(
        tau=tau,
        delta=delta,
        encoder_hidden=args.encoder_hidden,
        latent_dim=args.latent_dim,
        decoder_hidden=args.decoder_hidden,
        k_samples=args.k_samples,
    )
    out = Path(args.out)
    _write_run_config(out, "train", {
        "command": "train",
        "windows": str(archive),
        "out": str(out),
        "tau": tau,
        "delta": delta,
        "batch_size": config.batch_size,
        "epochs": config.resolved_epochs,
        "base_lr": config.base_lr,
        "lr_decay_factor": config.lr_decay_factor,
        "plateau_patience": config.plateau_patience,
        "alpha": weights.alpha,
        "beta": weights.beta,
        "gamma": weights.gamma,
        "losses": "".join(sorted(config.enabled_losses)) or "none",
        "seed": config.rng_seed,
        "checkpoint_every": config.checkpoint_every,
        "grad_clip": config.grad_clip,
        "encoder_hidden": predictor_config.encoder_hidden,
        "latent_dim": predictor_config.latent_dim,
        "decoder_hidden": predictor_config.decoder_hidden,
        "k_samples": predictor_config.k_samples,
    })
    _, metrics = train(config, windows, predictor_config, out_dir=out)
    final = metrics[-1]
    print(
        f"wrote {out / 'checkpoint.bin'}: {final['step'] + 1} steps, "
        f"final total loss {final['total']:.6g}"
    )
    return 0


def cmd_score(args) -> int:
    _require_paths(args.checkpoint, args.windows, args.labels)
    windows, _ = load_window_archive(args.windows)
    labels = load_label_file(args.labels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model, meta = load_checkpoint(args.checkpoint)
    generator = torch.Generator().manual_seed(int(meta.get("rng_seed", 0)))
    series, _diag = score_windows(
        model, windows, labels, error_mode=args.error_mode,
        k_samples=args.k_samples, latent_mode=args.latent_mode,
        generator=generator,
    )
    write_score_csv(out, series, labels)
    _write_run_config(out.parent, "score", {
        "command": "score",
        "checkpoint": str(args.checkpoint),
        "windows": str(args.windows),
        "labels": str(args.labels),
        "out": str(out),
        "error_mode": args.error_mode,
        "k_samples": args.k_samples,
        "latent_mode": args.latent_mode,
    })
    print(f"wrote {out}: {sum(len(s.scores) for s in series.values())} frames")
    return 0


def cmd_eval(args) -> int:
    _require_paths(args.scores)
    scores, labels = read_score_csv(args.scores)
    if args.labels is not None:
        _require_paths(args.labels)
        labels = load_label_file(args.labels)
    all_scores, all_labels, all_mask = [], [], []
    for video in sorted(scores):
        if video not in labels:
            raise DataError(f"no labels for video {video!r}")
        ls = labels[video]
        all_scores.append(scores[video])
        all_labels.append(ls.labels)
        mask = ls.hr_mask if ls.hr_mask is not None else np.zeros(len(ls), bool)
        all_mask.append(mask)
    if not all_scores:
        raise DataError(f"{args.scores}: no score rows")
    s = np.concatenate(all_scores)
    y = np.concatenate(all_labels)
    m = np.concatenate(all_mask)
    plain = roc_auc(s, y)
    try:
        masked = roc_auc(s, y, hr_mask=m)
    except DegenerateLabelsError:
        masked = None
    if args.hr_mask:
        if masked is None:
            raise DegenerateLabelsError(
                "HR masking leaves a single label class"
            )
        headline = masked
    else:
        headline = plain
    report = {
        "auc": plain,
        "auc_hr": masked,
        "hr_mask_applied": bool(args.hr_mask),
        "n_frames": int(len(s)),
    }
    print(f"auc {headline:.6g}")
    if args.out is not None:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_metric_report(out, report)
        _write_run_config(out.parent, "eval", {
            "command": "eval",
            "scores": str(args.scores),
            "labels": str(args.labels) if args.labels else None,
            "out": str(args.out),
            "hr_mask": bool(args.hr_mask),
        })
    return 0


def cmd_plot(args) -> int:
    _require_paths(args.scores)
    scores, labels = read_score_csv(args.scores)
    if not scores:
        raise DataError(f"{args.scores}: no score rows to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for video in sorted(scores):
        series = scores[video]
        fig, ax = plt.subplots(figsize=(10, 3.2))
        ax.plot(np.arange(len(series)), series, lw=1.0, color="#1f6fb2")
        ls = labels.get(video)
        if ls is not None:
            lab = ls.labels
            start = None
            for f in range(len(lab) + 1):
                on = f < len(lab) and lab[f] == 1
                if on and start is None:
                    start = f
                elif not on and start is not None:
                    ax.axvspan(start - 0.5, f - 0.5, color="#d64541", alpha=0.2)
                    start = None
        ax.set_xlabel("frame")
        ax.set_ylabel("anomaly score")
        ax.set_title(video)
        fig.tight_layout()
        target = out / f"{video}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)
    _write_run_config(out, "plot", {
        "command": "plot",
        "scores": str(args.scores),
        "out": str(out),
    })
    print(f"wrote {len(written)} figure(s) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseguard",
        description="Pose-trajectory prediction and video anomaly scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gait dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=1)
    p.add_argument("--tracks", type=int, default=8)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--anomaly-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=float, default=640.0)
    p.add_argument("--height", type=float, default=360.0)
    p.add_argument("--prefix", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="window pose files into an archive")
    p.add_argument("--poses", required=True,
                   help="pose file or directory of pose files")
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("--timescale", type=int, default=None,
                   help="sets tau = delta")
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a predictor on a window archive")
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--timescale", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay-factor", type=float, default=0.2)
    p.add_argument("--plateau-patience", type=int, default=10)
    p.add_argument("--losses", default="all",
                   help="all, none, or a subset of the letters B/E/J")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--grad-clip", type=float, default=10.0)
    p.add_argument("--no-grad-clip", action="store_true")
    p.add_argument("--encoder-hidden", type=int, default=256)
    p.add_argument("--latent-dim", type=int, default=32)
    p.add_argument("--decoder-hidden", type=int, default=256)
    p.add_argument("--k-samples", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score test windows with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="output score CSV")
    p.add_argument("--error-mode", choices=["summed", "flattened"],
                   default="summed")
    p.add_argument("--k-samples", type=int, default=None)
    p.add_argument("--latent-mode", choices=["mean", "stochastic"],
                   default="mean")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute AUC from a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", default=None,
                   help="optional label CSV overriding the score file's labels")
    p.add_argument("--out", default=None, help="optional metric JSON path")
    p.add_argument("--hr-mask", action="store_true",
                   help="drop HR-masked frames for the headline AUC")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="plot score curves from a score CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True, help="output directory for figures")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except PoseGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
