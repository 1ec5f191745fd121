"""File formats: NDJSON datasets, the model file, reports, and trace CSVs.

All NDJSON files are UTF-8 with LF line endings, one JSON object per line.
Writers emit keys in a fixed order and use Python's shortest round-trip float
formatting, so identical inputs produce byte-identical files. Parse errors
carry the file path and line number.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .align import FusedSequence, ScoreStream
from .fusion import FusionClassifier
from .localize import Proposal
from .timeline import FakeSegment, GroundTruth, TokenGrid


class FormatError(ValueError):
    """A malformed record in an input file (message carries file:line)."""


def _read_ndjson(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _write_ndjson(path, records) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def _require(obj: dict, key: str, path, lineno: int):
    if key not in obj:
        raise FormatError(f"{path}:{lineno}: missing required field {key!r}")
    return obj[key]


def read_ground_truth(path) -> list[GroundTruth]:
    out = []
    for lineno, obj in _read_ndjson(path):
        try:
            segments = tuple(
                FakeSegment(
                    start_ms=seg["start_ms"], end_ms=seg["end_ms"], modality=seg.get("modality", "both")
                )
                for seg in obj.get("fake_segments", [])
            )
            out.append(
                GroundTruth(
                    video_id=str(_require(obj, "video_id", path, lineno)),
                    clip_duration_ms=int(_require(obj, "duration_ms", path, lineno)),
                    fps=float(obj.get("fps", 25.0)),
                    fake_segments=segments,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad ground-truth record ({exc})") from None
    return out


def write_ground_truth(path, gts) -> int:
    return _write_ndjson(
        path,
        (
            {
                "video_id": gt.video_id,
                "fps": gt.fps,
                "duration_ms": gt.clip_duration_ms,
                "fake_segments": [
                    {"start_ms": seg.start_ms, "end_ms": seg.end_ms, "modality": seg.modality}
                    for seg in gt.fake_segments
                ],
            }
            for gt in gts
        ),
    )


def read_score_streams(path) -> list[ScoreStream]:
    out = []
    for lineno, obj in _read_ndjson(path):
        try:
            kwargs = {}
            for key in ("resolution_ms", "window_len_frames", "sparse_stride_frames"):
                if obj.get(key) is not None:
                    kwargs[key] = int(obj[key])
            out.append(
                ScoreStream(
                    video_id=str(_require(obj, "video_id", path, lineno)),
                    branch=str(_require(obj, "branch", path, lineno)),
                    scores=_require(obj, "scores", path, lineno),
                    **kwargs,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad score-stream record ({exc})") from None
    return out


def write_score_streams(path, streams) -> int:
    def record(s: ScoreStream) -> dict:
        obj = {"video_id": s.video_id, "branch": s.branch}
        if s.resolution_ms is not None:
            obj["resolution_ms"] = s.resolution_ms
        if s.window_len_frames is not None:
            obj["window_len_frames"] = s.window_len_frames
        if s.sparse_stride_frames is not None and s.branch == "lmm_sparse":
            obj["sparse_stride_frames"] = s.sparse_stride_frames
        obj["scores"] = s.scores.tolist()
        return obj

    return _write_ndjson(path, (record(s) for s in streams))


def read_fused(path) -> list[FusedSequence]:
    out = []
    for lineno, obj in _read_ndjson(path):
        try:
            grid = TokenGrid(
                clip_duration_ms=int(_require(obj, "clip_duration_ms", path, lineno)),
                token_ms=int(_require(obj, "token_ms", path, lineno)),
            )
            out.append(
                FusedSequence(
                    video_id=str(_require(obj, "video_id", path, lineno)),
                    grid=grid,
                    stream_layout=tuple(_require(obj, "stream_layout", path, lineno)),
                    frames=_require(obj, "frames", path, lineno),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad fused record ({exc})") from None
    return out


def write_fused(path, sequences) -> int:
    return _write_ndjson(
        path,
        (
            {
                "video_id": seq.video_id,
                "token_ms": seq.grid.token_ms,
                "clip_duration_ms": seq.grid.clip_duration_ms,
                "stream_layout": list(seq.stream_layout),
                "frames": seq.frames.tolist(),
            }
            for seq in sequences
        ),
    )


def read_token_scores(path) -> dict[str, np.ndarray]:
    out = {}
    for lineno, obj in _read_ndjson(path):
        vid = str(_require(obj, "video_id", path, lineno))
        scores = np.asarray(_require(obj, "scores", path, lineno), dtype=float)
        if scores.ndim != 1:
            raise FormatError(f"{path}:{lineno}: scores must be a flat list")
        out[vid] = scores
    return out


def write_token_scores(path, scores_by_video: dict) -> int:
    return _write_ndjson(
        path,
        (
            {"video_id": vid, "scores": np.asarray(scores_by_video[vid], dtype=float).tolist()}
            for vid in sorted(scores_by_video)
        ),
    )


def read_detections(path) -> dict[str, float]:
    out = {}
    for lineno, obj in _read_ndjson(path):
        vid = str(_require(obj, "video_id", path, lineno))
        out[vid] = float(_require(obj, "score", path, lineno))
    return out


def write_detections(path, scores_by_video: dict) -> int:
    return _write_ndjson(
        path,
        ({"video_id": vid, "score": float(scores_by_video[vid])} for vid in sorted(scores_by_video)),
    )


def read_proposals(path) -> dict[str, list[Proposal]]:
    out = {}
    for lineno, obj in _read_ndjson(path):
        vid = str(_require(obj, "video_id", path, lineno))
        try:
            out[vid] = [
                Proposal(
                    start_ms=p["start_ms"], end_ms=p["end_ms"], confidence=p["confidence"]
                )
                for p in _require(obj, "proposals", path, lineno)
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad proposal record ({exc})") from None
    return out


def write_proposals(path, proposals_by_video: dict) -> int:
    return _write_ndjson(
        path,
        (
            {
                "video_id": vid,
                "proposals": [
                    {"start_ms": p.start_ms, "end_ms": p.end_ms, "confidence": p.confidence}
                    for p in proposals_by_video[vid]
                ],
            }
            for vid in sorted(proposals_by_video)
        ),
    )


def save_fusion_model(path, clf: FusionClassifier) -> None:
    """Serialize a fitted fusion head; inference reproduces bit-exactly on load."""
    payload = {
        "input_dim": int(clf.input_dim_),
        "weights": clf.weights_.tolist(),
        "bias": clf.bias_.tolist(),
        "stream_layout": list(clf.stream_layout) if clf.stream_layout else None,
        "seed": clf.random_state,
        "schedule": {
            "kind": clf.schedule,
            "max_lr": clf.max_lr,
            "total_steps": clf.total_steps,
            "pct_start": clf.pct_start,
            "div_factor": clf.div_factor,
            "final_div_factor": clf.final_div_factor,
            "anneal": clf.anneal,
            "momentum": clf.momentum,
            "pos_weight": clf.pos_weight,
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_fusion_model(path) -> FusionClassifier:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None
    try:
        sched = payload.get("schedule", {})
        clf = FusionClassifier(
            max_lr=sched.get("max_lr", 0.5),
            total_steps=sched.get("total_steps", 0),
            schedule=sched.get("kind", "one_cycle"),
            pct_start=sched.get("pct_start", 0.3),
            div_factor=sched.get("div_factor", 25.0),
            final_div_factor=sched.get("final_div_factor", 1e4),
            anneal=sched.get("anneal", "cosine"),
            momentum=sched.get("momentum", 0.9),
            pos_weight=sched.get("pos_weight"),
            random_state=payload.get("seed", 0),
            stream_layout=tuple(payload["stream_layout"]) if payload.get("stream_layout") else None,
        )
        weights = np.asarray(payload["weights"], dtype=float)
        bias = np.asarray(payload["bias"], dtype=float)
        input_dim = int(payload["input_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad model file ({exc})") from None
    if weights.shape != (2, input_dim) or bias.shape != (2,):
        raise FormatError(
            f"{path}: model shapes inconsistent (weights {weights.shape}, bias {bias.shape}, "
            f"input_dim {input_dim})"
        )
    clf.weights_ = weights
    clf.bias_ = bias
    clf.input_dim_ = input_dim
    clf.classes_ = np.array([0, 1])
    return clf


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_trace_csv(path, rows, fieldnames) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
