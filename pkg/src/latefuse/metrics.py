"""Evaluation protocol: ROC AUC, EER, temporal-IoU AP and AR.

Conventions, fixed so results are deterministic and comparable across runs:

* ``roc_auc`` is the Mann-Whitney statistic computed with midranks, i.e.
  P(score_pos > score_neg) + 0.5 * P(tie).
* ``eer`` finds the FPR == FNR crossing on the ROC convex hull by linear
  interpolation between adjacent hull points.
* AP ranks proposals globally across videos and matches them greedily
  (highest-IoU unmatched ground-truth segment of the same video, ties to the
  earlier-starting segment); the precision-recall curve is integrated with
  every-point interpolation (precision envelope).
* AR@N keeps the top N proposals per video, averages recall over the IoU grid
  0.5:0.05:0.95, then averages over videos that have ground truth.
* Segment-level AUC pools tokens across videos (per-video AUC would be
  undefined for all-real clips).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_binary_labels, as_float_vector, check_consistent_length, check_interval

DEFAULT_IOU_THRESHOLDS = (0.5, 0.75, 0.9, 0.95)
DEFAULT_PROPOSAL_BUDGETS = (5, 10, 20, 30, 50)
# IoU grid used inside AR: 0.5, 0.55, ..., 0.95.
AR_IOU_GRID = tuple((10 + i) / 20 for i in range(10))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(values)]))
    group_rank = (starts + 1 + ends) / 2.0
    ranks_sorted = np.repeat(group_rank, ends - starts)
    ranks = np.empty(len(values))
    ranks[order] = ranks_sorted
    return ranks


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic with midranks."""
    s = as_float_vector(scores, "scores")
    y = as_binary_labels(labels)
    check_consistent_length(len(s), len(y), "scores vs labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative label")
    ranks = _midranks(s)
    rank_sum_pos = ranks[y == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> list[tuple[float, float]]:
    """ROC corner points (FPR, TPR) from (0,0) to (1,1), tied scores grouped."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        block_pos = int(y[i:j].sum())
        tp += block_pos
        fp += (j - i) - block_pos
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def _upper_hull(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    hull: list[tuple[float, float]] = []
    for p in points:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def eer(scores, labels) -> float:
    """Equal error rate: FPR == FNR crossing of the ROC convex hull."""
    s = as_float_vector(scores, "scores")
    y = as_binary_labels(labels)
    check_consistent_length(len(s), len(y), "scores vs labels")
    if y.sum() in (0, len(y)):
        raise ValueError("eer needs at least one positive and one negative label")
    hull = _upper_hull(_roc_points(s, y))
    for (x0, y0), (x1, y1) in zip(hull, hull[1:]):
        g0 = 1.0 - y0 - x0
        g1 = 1.0 - y1 - x1
        if g0 >= 0.0 >= g1:
            t = 0.0 if g0 == g1 else g0 / (g0 - g1)
            return float(x0 + t * (x1 - x0))
    raise AssertionError("ROC hull never crossed the FPR == FNR diagonal")  # unreachable


def segment_auc(per_video) -> float:
    """ROC AUC over the pooled tokens of all videos.

    ``per_video`` is an iterable of (token_scores, token_labels) pairs.
    """
    score_parts = []
    label_parts = []
    for scores, labels in per_video:
        score_parts.append(np.asarray(scores, dtype=float))
        label_parts.append(np.asarray(labels))
    if not score_parts:
        raise ValueError("segment_auc needs at least one video")
    return roc_auc(np.concatenate(score_parts), np.concatenate(label_parts))


def iou(a, b) -> float:
    """Temporal intersection over union of two (start_ms, end_ms) intervals."""
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    check_interval(a0, a1, "interval a")
    check_interval(b0, b1, "interval b")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union


def _gt_intervals(segments) -> list[tuple[float, float]]:
    out = []
    for seg in segments:
        if hasattr(seg, "start_ms"):
            out.append((float(seg.start_ms), float(seg.end_ms)))
        else:
            out.append((float(seg[0]), float(seg[1])))
    return out


def _proposal_order_key(prop) -> tuple:
    return (-prop.confidence, prop.start_ms, prop.end_ms)


def _greedy_match(ranked_proposals, gt_by_video, threshold) -> list[bool]:
    """True/False per ranked proposal: matched an unmatched same-video GT at IoU >= threshold.

    The candidate with the highest IoU wins; IoU ties go to the
    earlier-starting (then earlier-ending) ground-truth segment.
    """
    taken: dict[str, set[int]] = {}
    flags = []
    for video_id, start, end, _conf in ranked_proposals:
        segments = gt_by_video.get(video_id, [])
        used = taken.setdefault(video_id, set())
        best_j = -1
        best = (-1.0, 0.0, 0.0)
        for j, seg in enumerate(segments):
            if j in used:
                continue
            value = iou((start, end), seg)
            if value < threshold:
                continue
            cand = (value, -seg[0], -seg[1])
            if cand > best:
                best = cand
                best_j = j
        if best_j >= 0:
            used.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _rank_globally(proposals_by_video) -> list[tuple[str, float, float, float]]:
    flat = [
        (vid, float(p.start_ms), float(p.end_ms), float(p.confidence))
        for vid in sorted(proposals_by_video)
        for p in proposals_by_video[vid]
    ]
    flat.sort(key=lambda item: (-item[3], item[0], item[1], item[2]))
    return flat


def _normalized_gt(gt_by_video) -> dict[str, list[tuple[float, float]]]:
    return {vid: _gt_intervals(segs) for vid, segs in gt_by_video.items()}


def average_precision(proposals_by_video, gt_by_video, iou_threshold: float) -> float:
    """AP at one IoU threshold over a globally ranked proposal list.

    ``proposals_by_video`` maps video_id -> sequence of Proposal;
    ``gt_by_video`` maps video_id -> sequence of fake segments (objects with
    start_ms/end_ms or plain (start, end) pairs). Videos absent from
    ``gt_by_video`` (or with no segments) contribute only false positives.
    The PR curve is integrated with the every-point precision envelope.
    """
    gt = _normalized_gt(gt_by_video)
    total_gt = sum(len(v) for v in gt.values())
    if total_gt == 0:
        raise ValueError("average_precision needs at least one ground-truth segment")
    ranked = _rank_globally(proposals_by_video)
    if not ranked:
        return 0.0
    flags = _greedy_match(ranked, gt, iou_threshold)
    tp_cum = np.cumsum(flags)
    k = np.arange(1, len(flags) + 1)
    precision = tp_cum / k
    recall = tp_cum / total_gt
    # Every-point interpolation: running max of precision from the right.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * envelope).sum())


def average_recall_at(proposals_by_video, gt_by_video, budget: int, *, iou_grid=AR_IOU_GRID) -> float:
    """AR@budget: recall with the top-``budget`` proposals per video.

    Recall is averaged over ``iou_grid`` per video (greedy matching with the
    same tie rules as AP), then over videos that have at least one
    ground-truth segment.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    gt = _normalized_gt(gt_by_video)
    scored = {vid: segs for vid, segs in gt.items() if segs}
    if not scored:
        raise ValueError("average_recall_at needs at least one ground-truth segment")
    recalls = []
    for vid in sorted(scored):
        segments = scored[vid]
        top = sorted(proposals_by_video.get(vid, []), key=_proposal_order_key)[:budget]
        ranked = [(vid, float(p.start_ms), float(p.end_ms), float(p.confidence)) for p in top]
        per_tau = []
        for tau in iou_grid:
            matched = sum(_greedy_match(ranked, {vid: segments}, tau))
            per_tau.append(matched / len(segments))
        recalls.append(float(np.mean(per_tau)))
    return float(np.mean(recalls))


@dataclass(frozen=True)
class MetricsReport:
    """Full evaluation summary; AP/AR maps cover exactly the configured grids."""

    auc_video: float
    auc_segment: float
    eer: float
    ap: dict[float, float]
    ar: dict[int, float]
    num_videos: int
    num_gt_segments: int
    per_video: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "auc_video": self.auc_video,
            "auc_segment": self.auc_segment,
            "eer": self.eer,
            "ap": {f"{k:g}": v for k, v in self.ap.items()},
            "ar": {str(k): v for k, v in self.ar.items()},
            "num_videos": self.num_videos,
            "num_gt_segments": self.num_gt_segments,
        }
        if self.per_video:
            out["per_video"] = self.per_video
        return out


def compute_report(
    video_scores: dict[str, float],
    video_labels: dict[str, int],
    token_pairs,
    proposals_by_video,
    gt_by_video,
    *,
    iou_thresholds=DEFAULT_IOU_THRESHOLDS,
    budgets=DEFAULT_PROPOSAL_BUDGETS,
    include_per_video: bool = False,
) -> MetricsReport:
    """Assemble the MetricsReport from per-video artifacts.

    ``token_pairs`` is an iterable of (token_scores, token_labels); EER is
    computed on the same pooled tokens as the segment-level AUC.
    """
    ids = sorted(video_scores)
    if sorted(video_labels) != ids:
        raise ValueError("video_scores and video_labels must cover the same videos")
    vscores = [video_scores[v] for v in ids]
    vlabels = [video_labels[v] for v in ids]
    token_pairs = list(token_pairs)
    pooled_scores = np.concatenate([np.asarray(s, dtype=float) for s, _ in token_pairs])
    pooled_labels = np.concatenate([np.asarray(l) for _, l in token_pairs])
    gt = _normalized_gt(gt_by_video)
    per_video = {}
    if include_per_video:
        for vid in ids:
            per_video[vid] = {
                "video_score": float(video_scores[vid]),
                "video_label": int(video_labels[vid]),
                "num_gt_segments": len(gt.get(vid, [])),
                "num_proposals": len(proposals_by_video.get(vid, [])),
            }
    return MetricsReport(
        auc_video=roc_auc(vscores, vlabels),
        auc_segment=roc_auc(pooled_scores, pooled_labels),
        eer=eer(pooled_scores, pooled_labels),
        ap={float(t): average_precision(proposals_by_video, gt_by_video, t) for t in iou_thresholds},
        ar={int(n): average_recall_at(proposals_by_video, gt_by_video, n) for n in budgets},
        num_videos=len(ids),
        num_gt_segments=sum(len(v) for v in gt.values()),
        per_video=per_video,
    )
