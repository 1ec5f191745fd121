"""Alignment of heterogeneous branch score streams onto the common token grid.

Three branch families arrive with different native clocks:

* ``audio`` streams carry one (real, fake) logit pair per ``resolution_ms``
  window and are densified by repeat-based upsampling;
* the ``visual_window`` stream carries one pair per sliding window (stride one
  frame) and is densified by center-frame assignment with boundary replication;
* ``lmm_sparse`` carries one pair every ``sparse_stride_frames`` frames and is
  densified by nearest-neighbor interpolation.

Frame-clocked values are then resampled to the token grid (the identity at
25 fps on a 40 ms grid) and stacked column-wise into fused frames of 2*K
logits, visual stream first, audio streams in ascending resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .timeline import GroundTruth, TokenGrid, frames_in_clip
from .validation import as_score_matrix, readonly

BRANCH_VISUAL = "visual_window"
BRANCH_LMM = "lmm_sparse"
BRANCH_AUDIO = "audio"
BRANCHES = (BRANCH_VISUAL, BRANCH_LMM, BRANCH_AUDIO)

DEFAULT_KEEP_RESOLUTIONS = (160, 320, 640)
DEFAULT_WINDOW_FRAMES = 16
DEFAULT_SPARSE_STRIDE = 200


@dataclass(frozen=True)
class ScoreStream:
    """A raw per-branch score sequence with its native temporal metadata.

    ``scores`` holds one (logit_real, logit_fake) pair per native step:
    per ``resolution_ms`` window for audio, per sliding window for the visual
    stream, per sparse sample for the LMM stream.
    """

    video_id: str
    branch: str
    scores: np.ndarray
    resolution_ms: int | None = None
    window_len_frames: int | None = None
    sparse_stride_frames: int | None = None

    def __post_init__(self) -> None:
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch {self.branch!r}, expected one of {BRANCHES}")
        object.__setattr__(self, "scores", readonly(as_score_matrix(self.scores)))
        if self.branch == BRANCH_AUDIO:
            r = self.resolution_ms
            if r is None or r <= 0 or r % 20 != 0:
                raise ValueError(f"audio stream requires resolution_ms as a positive multiple of 20, got {r}")
        elif self.branch == BRANCH_VISUAL:
            if self.window_len_frames is None or self.window_len_frames < 1:
                raise ValueError("visual_window stream requires window_len_frames >= 1")
        elif self.branch == BRANCH_LMM:
            stride = self.sparse_stride_frames
            if stride is None:
                object.__setattr__(self, "sparse_stride_frames", DEFAULT_SPARSE_STRIDE)
            elif stride < 1:
                raise ValueError("sparse_stride_frames must be >= 1")


@dataclass(frozen=True)
class AlignedStream:
    """A branch's scores resampled onto the token grid, one 2-vector per token."""

    grid: TokenGrid
    label: str
    values: np.ndarray
    resolution_ms: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", readonly(as_score_matrix(self.values, "aligned values")))
        if len(self.values) != self.grid.num_tokens:
            raise ValueError(
                f"aligned stream {self.label!r} has {len(self.values)} rows for a "
                f"{self.grid.num_tokens}-token grid"
            )


@dataclass(frozen=True)
class FusedSequence:
    """Token-aligned fused input frames for one video: (num_tokens, 2*K) logits."""

    video_id: str
    grid: TokenGrid
    stream_layout: tuple[str, ...]
    frames: np.ndarray

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 2 or frames.shape != (self.grid.num_tokens, 2 * len(self.stream_layout)):
            raise ValueError(
                f"{self.video_id}: fused frames have shape {frames.shape}, expected "
                f"({self.grid.num_tokens}, {2 * len(self.stream_layout)})"
            )
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"{self.video_id}: fused frames contain non-finite values")
        object.__setattr__(self, "frames", readonly(frames))
        object.__setattr__(self, "stream_layout", tuple(self.stream_layout))

    def stream_values(self, label: str) -> np.ndarray:
        """The (num_tokens, 2) logit block that a named stream contributed."""
        pos = self.stream_layout.index(label)
        return self.frames[:, 2 * pos : 2 * pos + 2]


def repeat_upsample(stream: ScoreStream, grid: TokenGrid) -> AlignedStream:
    """Densify a coarse audio stream by repeating each score resolution/token_ms times.

    If the source covers fewer tokens than the grid, the final score is
    repeated to fill; surplus source scores are truncated. No interpolation:
    the output contains only values present in the input.
    """
    if stream.branch != BRANCH_AUDIO:
        raise ValueError(f"repeat_upsample expects an audio stream, got {stream.branch!r}")
    r = stream.resolution_ms
    if r % grid.token_ms != 0:
        raise ValueError(
            f"resolution {r} ms is not a multiple of the {grid.token_ms} ms token; "
            "filter finer resolutions out first (see select_resolutions)"
        )
    factor = r // grid.token_ms
    idx = np.minimum(np.arange(grid.num_tokens) // factor, len(stream.scores) - 1)
    return AlignedStream(grid=grid, label=f"audio{r}", values=stream.scores[idx], resolution_ms=r)


def select_resolutions(streams, keep) -> list[ScoreStream]:
    """Keep exactly the audio streams whose resolution is in ``keep``, ascending.

    Raises if a requested resolution has no stream, naming the missing one.
    """
    streams = list(streams)
    for s in streams:
        if s.branch != BRANCH_AUDIO:
            raise ValueError(f"select_resolutions expects audio streams, got {s.branch!r}")
    keep = sorted(set(int(k) for k in keep))
    available = {s.resolution_ms for s in streams}
    missing = [k for k in keep if k not in available]
    if missing:
        raise ValueError(f"requested audio resolution(s) {missing} not present (have {sorted(available)})")
    chosen = [s for s in streams if s.resolution_ms in set(keep)]
    return sorted(chosen, key=lambda s: s.resolution_ms)


def window_densify(stream: ScoreStream, num_frames: int) -> np.ndarray:
    """Expand sliding-window scores (stride one frame) to per-frame scores.

    Window j covers frames [j, j+W-1] and its score lands on the center frame
    j + W//2. Frames before the first valid center reuse the first window's
    score; frames after the last valid center reuse the last window's.
    """
    if stream.branch != BRANCH_VISUAL:
        raise ValueError(f"window_densify expects a visual_window stream, got {stream.branch!r}")
    w = stream.window_len_frames
    m = len(stream.scores)
    if num_frames < w:
        raise ValueError(f"clip has {num_frames} frames, shorter than the {w}-frame window")
    if m != num_frames - w + 1:
        raise ValueError(
            f"visual stream has {m} windows but {num_frames} frames with window {w} "
            f"requires {num_frames - w + 1}"
        )
    center = w // 2
    idx = np.clip(np.arange(num_frames) - center, 0, m - 1)
    return stream.scores[idx]


def sparse_densify(stream: ScoreStream, num_frames: int) -> np.ndarray:
    """Expand sparse samples (at frame indices 0, s, 2s, ...) to per-frame scores.

    Each frame takes the score of the nearest sample index; exact ties resolve
    to the earlier sample.
    """
    if stream.branch != BRANCH_LMM:
        raise ValueError(f"sparse_densify expects an lmm_sparse stream, got {stream.branch!r}")
    s = stream.sparse_stride_frames
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    expected = (num_frames - 1) // s + 1
    if len(stream.scores) != expected:
        raise ValueError(
            f"sparse stream has {len(stream.scores)} samples but {num_frames} frames at "
            f"stride {s} requires {expected}"
        )
    idx = np.arange(num_frames)
    q, rem = np.divmod(idx, s)
    k = q + (2 * rem > s)
    k = np.minimum(k, expected - 1)
    return stream.scores[k]


def to_token_grid(frame_scores, fps, grid: TokenGrid, *, label: str = "frames") -> AlignedStream:
    """Resample per-frame scores to the token grid by nearest frame midpoint.

    Token t takes the score of the frame whose midpoint is nearest the token
    midpoint (ties go to the earlier frame). Midpoints are compared in exact
    rational arithmetic so tie-breaking is reproducible. At 25 fps on a 40 ms
    grid this is the identity.
    """
    frame_scores = as_score_matrix(frame_scores, "frame scores")
    num_frames = frames_in_clip(grid.clip_duration_ms, fps)
    if len(frame_scores) != num_frames:
        raise ValueError(f"got {len(frame_scores)} frame scores, clip has {num_frames} frames")
    t = grid.num_tokens
    fps_frac = Fraction(fps)
    if fps_frac * grid.token_ms == 1000 and num_frames == t:
        return AlignedStream(grid=grid, label=label, values=frame_scores)
    half = Fraction(1, 2)
    indices = np.empty(t, dtype=np.int64)
    for tok in range(t):
        token_mid = (tok + half) * grid.token_ms
        ideal = token_mid * fps_frac / 1000 - half
        lo = int(ideal) if ideal >= 0 else -1
        lo = min(max(lo, 0), num_frames - 1)
        hi = min(lo + 1, num_frames - 1)
        d_lo = abs((lo + half) * 1000 / fps_frac - token_mid)
        d_hi = abs((hi + half) * 1000 / fps_frac - token_mid)
        indices[tok] = lo if d_lo <= d_hi else hi
    return AlignedStream(grid=grid, label=label, values=frame_scores[indices])


def stack_fused(visual: AlignedStream, audio, extras=()) -> tuple[np.ndarray, tuple[str, ...]]:
    """Concatenate aligned streams into fused frames of 2*K logits per token.

    Canonical order: visual pair first, then audio pairs in strictly ascending
    resolution, then any extra streams in the order given. All streams must
    share one grid. Returns (frames, stream_layout) where frames has shape
    (num_tokens, 2*K).
    """
    audio = list(audio)
    extras = list(extras)
    streams = [visual, *audio, *extras]
    for s in streams:
        if s.grid != visual.grid:
            raise ValueError(f"stream {s.label!r} is on a different grid than {visual.label!r}")
    resolutions = [s.resolution_ms for s in audio]
    if any(r is None for r in resolutions):
        raise ValueError("audio aligned streams must carry resolution_ms")
    if any(prev >= nxt for prev, nxt in zip(resolutions, resolutions[1:])):
        raise ValueError(f"audio streams must be in strictly ascending resolution, got {resolutions}")
    frames = np.hstack([s.values for s in streams])
    layout = tuple(s.label for s in streams)
    return frames, layout


def align_video(
    streams,
    gt: GroundTruth,
    *,
    token_ms: int = 40,
    keep_res=DEFAULT_KEEP_RESOLUTIONS,
    include_lmm: bool = False,
) -> FusedSequence:
    """Run the full per-video alignment: densify every branch and stack.

    ``streams`` are this video's ScoreStreams (any order). The visual stream is
    required; audio streams are filtered to ``keep_res`` (possibly empty); the
    LMM stream joins the fused layout only when ``include_lmm`` is set, after
    the audio block, so the default visual+audio prefix layout is stable.
    """
    streams = list(streams)
    for s in streams:
        if s.video_id != gt.video_id:
            raise ValueError(f"stream for {s.video_id!r} mixed into video {gt.video_id!r}")
    grid = TokenGrid(clip_duration_ms=gt.clip_duration_ms, token_ms=token_ms)
    num_frames = frames_in_clip(gt.clip_duration_ms, gt.fps)

    visual = [s for s in streams if s.branch == BRANCH_VISUAL]
    if len(visual) != 1:
        raise ValueError(f"{gt.video_id}: expected exactly one visual_window stream, got {len(visual)}")
    visual_aligned = to_token_grid(
        window_densify(visual[0], num_frames), gt.fps, grid, label="visual"
    )

    keep = sorted(set(int(k) for k in keep_res))
    audio_aligned = []
    if keep:
        audio_streams = select_resolutions([s for s in streams if s.branch == BRANCH_AUDIO], keep)
        audio_aligned = [repeat_upsample(s, grid) for s in audio_streams]

    extras = []
    if include_lmm:
        lmm = [s for s in streams if s.branch == BRANCH_LMM]
        if len(lmm) != 1:
            raise ValueError(f"{gt.video_id}: expected exactly one lmm_sparse stream, got {len(lmm)}")
        extras.append(to_token_grid(sparse_densify(lmm[0], num_frames), gt.fps, grid, label="lmm"))

    frames, layout = stack_fused(visual_aligned, audio_aligned, extras)
    return FusedSequence(video_id=gt.video_id, grid=grid, stream_layout=layout, frames=frames)


class BranchAligner(TransformerMixin, BaseEstimator):
    """Stateless transformer from (ground truth, streams) bundles to fused frames.

    ``transform`` takes an iterable of ``(GroundTruth, [ScoreStream, ...])``
    pairs and returns one FusedSequence per video, in input order. ``fit`` is
    a no-op kept for pipeline compatibility.
    """

    def __init__(self, token_ms: int = 40, keep_res=DEFAULT_KEEP_RESOLUTIONS, include_lmm: bool = False):
        self.token_ms = token_ms
        self.keep_res = keep_res
        self.include_lmm = include_lmm

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> list[FusedSequence]:
        return [
            align_video(
                streams,
                gt,
                token_ms=self.token_ms,
                keep_res=self.keep_res,
                include_lmm=self.include_lmm,
            )
            for gt, streams in X
        ]
