"""From dense per-token fake probabilities to segment proposals and detections."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timeline import TokenGrid
from .validation import as_probability_vector, check_interval, readonly

# 19 evenly spaced thresholds, 0.05 .. 0.95.
DEFAULT_THRESHOLDS = tuple((i + 1) / 20 for i in range(19))
DEFAULT_TOP_K = 100


@dataclass(frozen=True)
class Proposal:
    """A candidate fake interval with a confidence in [0, 1]."""

    start_ms: float
    end_ms: float
    confidence: float

    def __post_init__(self) -> None:
        check_interval(self.start_ms, self.end_ms, "proposal")
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"proposal confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class DetectionResult:
    """Video-level detection: the maximum per-token fake probability."""

    video_id: str
    token_scores: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "token_scores", readonly(as_probability_vector(self.token_scores, "token_scores"))
        )

    @property
    def video_score(self) -> float:
        return float(self.token_scores.max())


def detect_video(token_scores) -> float:
    """Video-level score: the maximum token-level fake probability."""
    scores = as_probability_vector(token_scores, "token_scores")
    return float(scores.max())


def _runs_at_threshold(mask: np.ndarray, max_gap: int) -> list[tuple[int, int]]:
    """Maximal True runs (inclusive token spans), merging gaps of <= max_gap Falses."""
    runs: list[tuple[int, int]] = []
    start = None
    for i, hot in enumerate(mask):
        if hot and start is None:
            start = i
        elif not hot and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    if max_gap <= 0 or len(runs) < 2:
        return runs
    merged = [runs[0]]
    for a, b in runs[1:]:
        pa, pb = merged[-1]
        if a - pb - 1 <= max_gap:
            merged[-1] = (pa, b)
        else:
            merged.append((a, b))
    return merged


def propose_segments(
    token_scores,
    grid: TokenGrid,
    *,
    thresholds=DEFAULT_THRESHOLDS,
    max_gap_tokens: int = 0,
    top_k: int = DEFAULT_TOP_K,
    confidence: str = "mean",
) -> list[Proposal]:
    """Extract ranked segment proposals by sweeping score thresholds.

    For each threshold (descending), maximal runs of tokens scoring >= the
    threshold become proposals spanning [run_start * token_ms, run_end_excl *
    token_ms), clamped to the clip duration; runs separated by at most
    ``max_gap_tokens`` sub-threshold tokens are merged first. Confidence is
    the mean (or ``confidence='max'``, the max) token score over the merged
    span; identical intervals found at several thresholds keep their highest
    confidence. Output is sorted by confidence descending (ties: earlier
    start, then earlier end) and truncated to ``top_k``.
    """
    scores = as_probability_vector(token_scores, "token_scores")
    if len(scores) != grid.num_tokens:
        raise ValueError(f"got {len(scores)} token scores for a {grid.num_tokens}-token grid")
    taus = sorted(set(float(t) for t in thresholds), reverse=True)
    if not taus:
        raise ValueError("threshold grid must be non-empty")
    if confidence not in ("mean", "max"):
        raise ValueError(f"confidence must be 'mean' or 'max', got {confidence!r}")
    if top_k < 0:
        raise ValueError("top_k must be >= 0")

    best: dict[tuple[int, int], float] = {}
    for tau in taus:
        for a, b in _runs_at_threshold(scores >= tau, max_gap_tokens):
            span = scores[a : b + 1]
            conf = float(span.mean()) if confidence == "mean" else float(span.max())
            key = (a, b)
            if key not in best or conf > best[key]:
                best[key] = conf

    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))[:top_k]
    tm = grid.token_ms
    return [
        Proposal(
            start_ms=a * tm,
            end_ms=min((b + 1) * tm, grid.clip_duration_ms),
            confidence=conf,
        )
        for (a, b), conf in ranked
    ]


def proposals_to_mask(proposals, grid: TokenGrid) -> np.ndarray:
    """Token mask covered by any proposal (strictly positive overlap), int8 0/1."""
    labels = np.zeros(grid.num_tokens, dtype=np.int8)
    tm = grid.token_ms
    for prop in proposals:
        if prop.start_ms < 0 or prop.end_ms > grid.clip_duration_ms:
            raise ValueError(
                f"proposal ({prop.start_ms}, {prop.end_ms}) outside [0, {grid.clip_duration_ms}]"
            )
        first = max(0, int(prop.start_ms // tm))
        last = min(grid.num_tokens - 1, int(math.ceil(prop.end_ms / tm)) - 1)
        for i in range(first, last + 1):
            if min((i + 1) * tm, prop.end_ms) - max(i * tm, prop.start_ms) > 0:
                labels[i] = 1
    return labels
