"""Command-line pipeline: synth, align, train, predict, localize, evaluate, trace.

Every command is a pure function of its input files and configuration, and
processes videos in sorted order, so re-running with identical inputs yields
byte-identical outputs. Option precedence: command-line flags, then the
--config JSON file, then built-in defaults. Exit codes: 0 success, 1
validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import io
from .align import align_video
from .fusion import FusionClassifier, softmax_probabilities
from .localize import DEFAULT_THRESHOLDS, DEFAULT_TOP_K, detect_video, propose_segments
from .metrics import DEFAULT_IOU_THRESHOLDS, DEFAULT_PROPOSAL_BUDGETS, MetricsReport, compute_report
from .synthgen import DEFAULT_MIX, ScenarioConfig, generate
from .timeline import TokenGrid, rasterize_labels


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise io.FormatError(f"{path}: invalid JSON config ({exc.msg})") from None
    if not isinstance(config, dict):
        raise io.FormatError(f"{path}: config must be a JSON object")
    return config


def _opt(args, config: dict, name: str, default):
    value = getattr(args, name, None)
    if value is None:
        value = config.get(name, default)
    return value


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value).strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _float_list(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    text = str(value).strip()
    if not text:
        return ()
    if ":" in text:
        start, stop, count = text.split(":")
        return tuple(np.linspace(float(start), float(stop), int(count)).tolist())
    return tuple(float(part) for part in text.split(","))


def _int_pair(value) -> tuple[int, int]:
    items = _int_list(value)
    if len(items) != 2:
        raise ValueError(f"expected 'lo,hi', got {value!r}")
    return items[0], items[1]


def _mix(value) -> dict[str, float]:
    if isinstance(value, dict):
        return {str(k): float(v) for k, v in value.items()}
    out = {}
    for part in str(value).split(","):
        name, _, weight = part.partition("=")
        if not weight:
            raise ValueError(f"bad scenario mix entry {part!r}, expected NAME=WEIGHT")
        out[name.strip()] = float(weight)
    return out


def _read_gt_map(path) -> dict:
    gts = io.read_ground_truth(path)
    out = {}
    for gt in gts:
        if gt.video_id in out:
            raise ValueError(f"{path}: duplicate ground truth for video {gt.video_id!r}")
        out[gt.video_id] = gt
    return out


def cmd_synth(args, config) -> int:
    out_dir = io.ensure_dir(_opt(args, config, "out", "."))
    cfg = ScenarioConfig(
        num_videos=int(_opt(args, config, "videos", 100)),
        seed=int(_opt(args, config, "seed", 0)),
        duration_range_ms=_int_pair(_opt(args, config, "duration_range", "3000,10000")),
        fake_duration_mean_ms=float(_opt(args, config, "fake_mean", 320.0)),
        fakes_per_video_range=_int_pair(_opt(args, config, "fakes_range", "1,2")),
        scenario_mix=_mix(_opt(args, config, "mix", DEFAULT_MIX)),
        noise_sigma=float(_opt(args, config, "sigma", 0.5)),
        miss_prob=float(_opt(args, config, "miss", 0.1)),
        fps=float(_opt(args, config, "fps", 25.0)),
        window_len_frames=int(_opt(args, config, "window_frames", 16)),
        sparse_stride_frames=int(_opt(args, config, "sparse_stride", 200)),
        audio_resolutions=_int_list(_opt(args, config, "audio_res", "160,320,640")),
        hot_logit=float(_opt(args, config, "hot_logit", 2.0)),
    )
    gts, streams = generate(cfg)
    n_gt = io.write_ground_truth(out_dir / "gt.ndjson", gts)
    n_streams = io.write_score_streams(out_dir / "streams.ndjson", streams)
    echo = dataclasses.asdict(cfg)
    echo["scenario_mix"] = dict(cfg.scenario_mix)
    io.write_json(out_dir / "synth_config.json", echo)
    print(f"wrote {n_gt} ground-truth records and {n_streams} stream records to {out_dir}")
    return 0


def cmd_align(args, config) -> int:
    gt_map = _read_gt_map(_opt(args, config, "gt", "gt.ndjson"))
    streams = io.read_score_streams(_opt(args, config, "streams", "streams.ndjson"))
    by_video = defaultdict(list)
    for stream in streams:
        by_video[stream.video_id].append(stream)
    keep_res = _int_list(_opt(args, config, "keep_res", "160,320,640"))
    token_ms = int(_opt(args, config, "token_ms", 40))
    include_lmm = bool(_opt(args, config, "include_lmm", False))
    fused = []
    failed = 0
    for vid in sorted(gt_map):
        try:
            fused.append(
                align_video(
                    by_video.get(vid, []),
                    gt_map[vid],
                    token_ms=token_ms,
                    keep_res=keep_res,
                    include_lmm=include_lmm,
                )
            )
        except ValueError as exc:
            failed += 1
            print(f"align: {vid}: {exc}", file=sys.stderr)
    io.write_fused(_opt(args, config, "out", "fused.ndjson"), fused)
    dim = fused[0].frames.shape[1] if fused else 0
    print(f"aligned {len(fused)} videos ({failed} failed), fused dimension {dim}")
    return 1 if gt_map and not fused else 0


def _training_arrays(fused, gt_map):
    frames, labels, groups = [], [], []
    for seq in sorted(fused, key=lambda s: s.video_id):
        if seq.video_id not in gt_map:
            raise ValueError(f"no ground truth for video {seq.video_id!r}")
        frames.append(seq.frames)
        labels.append(rasterize_labels(gt_map[seq.video_id], seq.grid))
        groups.extend([seq.video_id] * len(seq.frames))
    if not frames:
        raise ValueError("no fused videos to train on")
    return np.vstack(frames), np.concatenate(labels), np.array(groups)


def cmd_train(args, config) -> int:
    gt_map = _read_gt_map(_opt(args, config, "gt", "gt.ndjson"))
    fused = io.read_fused(_opt(args, config, "fused", "fused.ndjson"))
    layouts = {seq.stream_layout for seq in fused}
    if len(layouts) > 1:
        raise ValueError(f"fused file mixes stream layouts: {sorted(layouts)}")
    x, y, groups = _training_arrays(fused, gt_map)
    clf = FusionClassifier(
        max_lr=float(_opt(args, config, "max_lr", 0.5)),
        total_steps=int(_opt(args, config, "steps", 2000)),
        schedule=str(_opt(args, config, "schedule", "one_cycle")),
        pct_start=float(_opt(args, config, "pct_start", 0.3)),
        div_factor=float(_opt(args, config, "div_factor", 25.0)),
        final_div_factor=float(_opt(args, config, "final_div", 1e4)),
        anneal=str(_opt(args, config, "anneal", "cosine")),
        momentum=float(_opt(args, config, "momentum", 0.9)),
        pos_weight=_opt(args, config, "pos_weight", None),
        random_state=int(_opt(args, config, "seed", 0)),
        stream_layout=next(iter(layouts)),
    )
    clf.fit(x, y, groups=groups)
    out = _opt(args, config, "out", "model.json")
    io.save_fusion_model(out, clf)
    accuracy = float((clf.predict(x) == y).mean())
    print(
        f"trained on {len(fused)} videos / {len(x)} tokens: loss "
        f"{clf.initial_loss_:.4f} -> {clf.final_loss_:.4f}, token accuracy {accuracy:.4f}"
    )
    return 0


def cmd_predict(args, config) -> int:
    clf = io.load_fusion_model(_opt(args, config, "model", "model.json"))
    fused = io.read_fused(_opt(args, config, "fused", "fused.ndjson"))
    out_dir = io.ensure_dir(_opt(args, config, "out", "."))
    token_scores = {}
    detections = {}
    for seq in sorted(fused, key=lambda s: s.video_id):
        if clf.stream_layout and tuple(clf.stream_layout) != seq.stream_layout:
            raise ValueError(
                f"{seq.video_id}: fused layout {seq.stream_layout} does not match the "
                f"model's {tuple(clf.stream_layout)}"
            )
        probs = clf.predict_proba(seq.frames)
        token_scores[seq.video_id] = probs[:, 1]
        detections[seq.video_id] = detect_video(probs[:, 1])
    io.write_token_scores(out_dir / "token_scores.ndjson", token_scores)
    io.write_detections(out_dir / "detections.ndjson", detections)
    print(f"predicted {len(token_scores)} videos into {out_dir}")
    return 0


def cmd_localize(args, config) -> int:
    scores = io.read_token_scores(_opt(args, config, "scores", "token_scores.ndjson"))
    gt_map = _read_gt_map(_opt(args, config, "gt", "gt.ndjson"))
    token_ms = int(_opt(args, config, "token_ms", 40))
    thresholds = _float_list(_opt(args, config, "thresholds", DEFAULT_THRESHOLDS))
    top_k = int(_opt(args, config, "top_k", DEFAULT_TOP_K))
    max_gap = int(_opt(args, config, "max_gap", 0))
    confidence = str(_opt(args, config, "confidence", "mean"))
    proposals = {}
    for vid in sorted(scores):
        if vid not in gt_map:
            raise ValueError(f"no ground truth (clip duration) for video {vid!r}")
        grid = TokenGrid(clip_duration_ms=gt_map[vid].clip_duration_ms, token_ms=token_ms)
        proposals[vid] = propose_segments(
            scores[vid],
            grid,
            thresholds=thresholds,
            max_gap_tokens=max_gap,
            top_k=top_k,
            confidence=confidence,
        )
    io.write_proposals(_opt(args, config, "out", "proposals.ndjson"), proposals)
    total = sum(len(v) for v in proposals.values())
    print(f"proposed {total} segments across {len(proposals)} videos")
    return 0


def _format_table(report: MetricsReport) -> str:
    lines = []
    lines.append("detection (%, proposals ranked globally across videos)")
    lines.append("  AUC (Video) ↑   AUC (Seg) ↑   EER ↓")
    lines.append(
        f"  {report.auc_video * 100:13.2f}   {report.auc_segment * 100:11.2f}   {report.eer * 100:5.2f}"
    )
    ap_taus = sorted(report.ap)
    ar_budgets = sorted(report.ar, reverse=True)
    lines.append("localization (%)")
    lines.append(
        "  " + "   ".join([f"AP@{t:g} ↑" for t in ap_taus] + [f"AR@{n} ↑" for n in ar_budgets])
    )
    cells = [f"{report.ap[t] * 100:6.2f}" for t in ap_taus] + [
        f"{report.ar[n] * 100:6.2f}" for n in ar_budgets
    ]
    lines.append("  " + "   ".join(cells))
    return "\n".join(lines)


def cmd_evaluate(args, config) -> int:
    gt_map = _read_gt_map(_opt(args, config, "gt", "gt.ndjson"))
    detections = io.read_detections(_opt(args, config, "detections", "detections.ndjson"))
    token_scores = io.read_token_scores(_opt(args, config, "scores", "token_scores.ndjson"))
    proposals = io.read_proposals(_opt(args, config, "proposals", "proposals.ndjson"))
    token_ms = int(_opt(args, config, "token_ms", 40))
    iou_thresholds = _float_list(_opt(args, config, "iou", DEFAULT_IOU_THRESHOLDS))
    budgets = _int_list(_opt(args, config, "budgets", DEFAULT_PROPOSAL_BUDGETS))
    missing = [vid for vid in gt_map if vid not in detections or vid not in token_scores]
    if missing:
        raise ValueError(f"missing detections or token scores for video(s) {missing[:5]}")
    labels = {vid: (1 if gt.video_label == "fake" else 0) for vid, gt in gt_map.items()}
    token_pairs = []
    for vid in sorted(gt_map):
        grid = TokenGrid(clip_duration_ms=gt_map[vid].clip_duration_ms, token_ms=token_ms)
        token_pairs.append((token_scores[vid], rasterize_labels(gt_map[vid], grid)))
    report = compute_report(
        {vid: detections[vid] for vid in gt_map},
        labels,
        token_pairs,
        proposals,
        {vid: gt.fake_segments for vid, gt in gt_map.items()},
        iou_thresholds=iou_thresholds,
        budgets=budgets,
        include_per_video=bool(_opt(args, config, "per_video", False)),
    )
    payload = report.as_dict()
    payload["config"] = {
        "token_ms": token_ms,
        "iou_thresholds": list(iou_thresholds),
        "budgets": list(budgets),
        "proposal_ranking": "global",
    }
    out = _opt(args, config, "out", "report.json")
    io.write_report(out, payload)
    print(_format_table(report))
    print(f"report written to {out}")
    return 0


def cmd_trace(args, config) -> int:
    gt_map = _read_gt_map(_opt(args, config, "gt", "gt.ndjson"))
    streams = io.read_score_streams(_opt(args, config, "streams", "streams.ndjson"))
    clf = io.load_fusion_model(_opt(args, config, "model", "model.json"))
    out_dir = io.ensure_dir(_opt(args, config, "out", "."))
    wanted = _opt(args, config, "videos", None)
    vids = sorted(gt_map) if wanted is None else [v.strip() for v in str(wanted).split(",")]
    keep_res = _int_list(_opt(args, config, "keep_res", "160,320,640"))
    token_ms = int(_opt(args, config, "token_ms", 40))
    include_lmm = bool(_opt(args, config, "include_lmm", False))
    by_video = defaultdict(list)
    for stream in streams:
        by_video[stream.video_id].append(stream)
    segments = {}
    for vid in vids:
        if vid not in gt_map:
            raise ValueError(f"unknown video {vid!r}")
        gt = gt_map[vid]
        seq = align_video(
            by_video.get(vid, []), gt, token_ms=token_ms, keep_res=keep_res, include_lmm=include_lmm
        )
        fused_p = clf.predict_proba(seq.frames)[:, 1]
        branch_p = {
            label: softmax_probabilities(seq.stream_values(label))[:, 1]
            for label in seq.stream_layout
        }
        labels = rasterize_labels(gt, seq.grid)
        fields = ["token", "time_ms", *[f"p_{label}" for label in seq.stream_layout], "p_fused", "gt_fake"]
        rows = []
        for t in range(seq.grid.num_tokens):
            row = {"token": t, "time_ms": t * token_ms}
            for label in seq.stream_layout:
                row[f"p_{label}"] = f"{branch_p[label][t]:.6f}"
            row["p_fused"] = f"{fused_p[t]:.6f}"
            row["gt_fake"] = int(labels[t])
            rows.append(row)
        io.write_trace_csv(out_dir / f"trace_{vid}.csv", rows, fields)
        segments[vid] = [
            {"start_ms": seg.start_ms, "end_ms": seg.end_ms, "modality": seg.modality}
            for seg in gt.fake_segments
        ]
    io.write_json(out_dir / "trace_segments.json", segments)
    print(f"traced {len(vids)} videos into {out_dir}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="latefuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON config file (flags override it)")
        return p

    p = add("synth", cmd_synth, "generate a synthetic benchmark (ground truth + score streams)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--videos", type=int, help="number of videos")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--duration-range", dest="duration_range", help="clip duration range 'lo,hi' in ms")
    p.add_argument("--fake-mean", dest="fake_mean", type=float, help="mean fake-segment duration in ms")
    p.add_argument("--fakes-range", dest="fakes_range", help="fake segments per forged video 'lo,hi'")
    p.add_argument("--mix", help="scenario mix, e.g. 'RVRA=0.25,FVRA=0.25,RVFA=0.25,FVFA=0.25'")
    p.add_argument("--sigma", type=float, help="logit noise standard deviation")
    p.add_argument("--miss", type=float, help="per-stream chance of missing a fake segment")
    p.add_argument("--fps", type=float, help="video frame rate")
    p.add_argument("--window-frames", dest="window_frames", type=int, help="visual sliding-window length")
    p.add_argument("--sparse-stride", dest="sparse_stride", type=int, help="LMM sparse sample stride")
    p.add_argument("--audio-res", dest="audio_res", help="audio resolutions to emit, e.g. '160,320,640'")
    p.add_argument("--hot-logit", dest="hot_logit", type=float, help="mean fake logit over forged regions")

    p = add("align", cmd_align, "align branch streams onto the token grid and stack fused frames")
    p.add_argument("--gt", help="ground truth NDJSON")
    p.add_argument("--streams", help="score stream NDJSON")
    p.add_argument("--out", help="fused output NDJSON")
    p.add_argument("--keep-res", dest="keep_res", help="audio resolutions to fuse (may be empty)")
    p.add_argument("--token-ms", dest="token_ms", type=int, help="token length in ms")
    p.add_argument("--include-lmm", dest="include_lmm", action="store_const", const=True,
                   help="append the sparse LMM stream to the fused layout")

    p = add("train", cmd_train, "train the linear fusion head on fused frames")
    p.add_argument("--gt", help="ground truth NDJSON")
    p.add_argument("--fused", help="fused frames NDJSON")
    p.add_argument("--out", help="model JSON path")
    p.add_argument("--seed", type=int, help="init/shuffle seed")
    p.add_argument("--max-lr", dest="max_lr", type=float, help="peak learning rate")
    p.add_argument("--steps", type=int, help="total optimizer steps (one video batch per step)")
    p.add_argument("--pct-start", dest="pct_start", type=float, help="fraction of steps spent warming up")
    p.add_argument("--div-factor", dest="div_factor", type=float, help="initial lr divisor")
    p.add_argument("--final-div", dest="final_div", type=float, help="final lr divisor")
    p.add_argument("--anneal", choices=["cosine", "linear"], help="interpolation shape")
    p.add_argument("--schedule", choices=["one_cycle", "constant"], help="learning-rate policy")
    p.add_argument("--momentum", type=float, help="SGD momentum")
    p.add_argument("--pos-weight", dest="pos_weight", type=float, help="weight on fake-token loss terms")

    p = add("predict", cmd_predict, "apply a trained model: per-token scores + video detections")
    p.add_argument("--model", help="model JSON")
    p.add_argument("--fused", help="fused frames NDJSON")
    p.add_argument("--out", help="output directory")

    p = add("localize", cmd_localize, "extract ranked segment proposals from token scores")
    p.add_argument("--scores", help="token scores NDJSON")
    p.add_argument("--gt", help="ground truth NDJSON (for clip durations)")
    p.add_argument("--out", help="proposals output NDJSON")
    p.add_argument("--thresholds", help="threshold grid: 'a,b,c' or 'start:stop:count'")
    p.add_argument("--top-k", dest="top_k", type=int, help="keep at most this many proposals per video")
    p.add_argument("--max-gap", dest="max_gap", type=int, help="merge runs separated by <= this many tokens")
    p.add_argument("--token-ms", dest="token_ms", type=int, help="token length in ms")
    p.add_argument("--confidence", choices=["mean", "max"], help="proposal confidence statistic")

    p = add("evaluate", cmd_evaluate, "score detections, token scores, and proposals against ground truth")
    p.add_argument("--gt", help="ground truth NDJSON")
    p.add_argument("--detections", help="detections NDJSON")
    p.add_argument("--scores", help="token scores NDJSON")
    p.add_argument("--proposals", help="proposals NDJSON")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--iou", help="IoU thresholds for AP, e.g. '0.5,0.75,0.9,0.95'")
    p.add_argument("--budgets", help="proposal budgets for AR, e.g. '5,10,20,30,50'")
    p.add_argument("--token-ms", dest="token_ms", type=int, help="token length in ms")
    p.add_argument("--per-video", dest="per_video", action="store_const", const=True,
                   help="include a per-video breakdown in the report")

    p = add("trace", cmd_trace, "dump per-video branch/fused score traces with ground-truth shading")
    p.add_argument("--gt", help="ground truth NDJSON")
    p.add_argument("--streams", help="score stream NDJSON")
    p.add_argument("--model", help="model JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--videos", help="comma-separated video ids (default: all)")
    p.add_argument("--keep-res", dest="keep_res", help="audio resolutions to fuse")
    p.add_argument("--token-ms", dest="token_ms", type=int, help="token length in ms")
    p.add_argument("--include-lmm", dest="include_lmm", action="store_const", const=True,
                   help="append the sparse LMM stream to the fused layout")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config)
        return args.func(args, config)
    except _UsageError as exc:
        print(f"latefuse: error: {exc}", file=sys.stderr)
        return 1
    except (io.FormatError, ValueError, FloatingPointError) as exc:
        print(f"latefuse: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"latefuse: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
