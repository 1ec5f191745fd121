"""Common token timeline, ground truth intervals, and label rasterization.

Every branch score stream ultimately lands on one clip-wide grid of fixed-length
tokens (40 ms by default, one video frame at 25 fps). All types here are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .validation import check_interval

MODALITIES = ("visual", "audio", "both")

DEFAULT_TOKEN_MS = 40
DEFAULT_FPS = 25.0


@dataclass(frozen=True)
class TokenGrid:
    """Uniform token timeline covering one clip.

    Token ``i`` covers the half-open interval ``[i*token_ms, (i+1)*token_ms)``.
    The token count is the ceiling of ``clip_duration_ms / token_ms``, so a
    non-divisible duration ends with a partial token rather than dropping the
    tail of the clip.
    """

    clip_duration_ms: int
    token_ms: int = DEFAULT_TOKEN_MS

    def __post_init__(self) -> None:
        if self.token_ms <= 0:
            raise ValueError(f"token_ms must be positive, got {self.token_ms}")
        if self.clip_duration_ms <= 0:
            raise ValueError(f"clip_duration_ms must be positive, got {self.clip_duration_ms}")

    @property
    def num_tokens(self) -> int:
        return int(math.ceil(Fraction(self.clip_duration_ms) / Fraction(self.token_ms)))

    def token_bounds(self, index: int) -> tuple[float, float]:
        """Nominal (unclamped) half-open interval covered by token ``index``."""
        if not 0 <= index < self.num_tokens:
            raise ValueError(f"token index {index} out of range [0, {self.num_tokens})")
        return index * self.token_ms, (index + 1) * self.token_ms


@dataclass(frozen=True)
class FakeSegment:
    """A manipulated interval, in clip milliseconds, tagged with the forged modality."""

    start_ms: int
    end_ms: int
    modality: str = "both"

    def __post_init__(self) -> None:
        check_interval(self.start_ms, self.end_ms, "fake segment")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}, expected one of {MODALITIES}")


@dataclass(frozen=True)
class GroundTruth:
    """Per-video ground truth: clip timing plus the list of fake intervals.

    ``video_label`` is derived, never stored: a video is fake exactly when it
    has at least one fake segment.
    """

    video_id: str
    clip_duration_ms: int
    fps: float = DEFAULT_FPS
    fake_segments: tuple[FakeSegment, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.clip_duration_ms <= 0:
            raise ValueError(f"{self.video_id}: clip_duration_ms must be positive")
        if self.fps <= 0:
            raise ValueError(f"{self.video_id}: fps must be positive")
        object.__setattr__(self, "fake_segments", tuple(self.fake_segments))
        for seg in self.fake_segments:
            if seg.start_ms < 0 or seg.end_ms > self.clip_duration_ms:
                raise ValueError(
                    f"{self.video_id}: segment ({seg.start_ms}, {seg.end_ms}) outside "
                    f"[0, {self.clip_duration_ms}]"
                )

    @property
    def video_label(self) -> str:
        return "fake" if self.fake_segments else "real"

    def segments_for(self, modalities) -> tuple[FakeSegment, ...]:
        """Fake segments whose modality is in ``modalities``."""
        wanted = set(modalities)
        return tuple(s for s in self.fake_segments if s.modality in wanted)


def frames_in_clip(clip_duration_ms, fps) -> int:
    """Number of video frames in a clip: ceil(duration * fps / 1000), computed exactly."""
    return int(math.ceil(Fraction(clip_duration_ms) * Fraction(fps) / 1000))


def rasterize_labels(gt: GroundTruth, grid: TokenGrid, *, min_overlap_ms: float = 0.0) -> np.ndarray:
    """Rasterize fake intervals onto the token grid.

    A token is labeled fake when its interval overlaps any fake segment by
    strictly more than zero milliseconds (a shared boundary point does not
    count). Setting ``min_overlap_ms`` > 0 additionally requires at least that
    much overlap.

    Returns an int8 array of 0 (real) / 1 (fake) with one entry per token.
    """
    if grid.clip_duration_ms != gt.clip_duration_ms:
        raise ValueError(
            f"{gt.video_id}: grid covers {grid.clip_duration_ms} ms but ground truth "
            f"covers {gt.clip_duration_ms} ms"
        )
    if min_overlap_ms < 0:
        raise ValueError("min_overlap_ms must be non-negative")
    labels = np.zeros(grid.num_tokens, dtype=np.int8)
    tm = grid.token_ms
    for seg in gt.fake_segments:
        first = max(0, int(seg.start_ms // tm))
        last = min(grid.num_tokens - 1, int(math.ceil(seg.end_ms / tm)) - 1)
        for i in range(first, last + 1):
            overlap = min((i + 1) * tm, seg.end_ms) - max(i * tm, seg.start_ms)
            if overlap > 0 and overlap >= min_overlap_ms:
                labels[i] = 1
    return labels


def video_label_of(labels) -> str:
    """Collapse token labels to the video-level decision: fake iff any token is fake."""
    arr = np.asarray(labels)
    if arr.size == 0:
        raise ValueError("cannot derive a video label from empty token labels")
    return "fake" if np.any(arr == 1) else "real"


def frame_to_token_map(fps, grid: TokenGrid, frame_index: int) -> int:
    """Token whose interval contains the midpoint of video frame ``frame_index``.

    The result is clamped to the grid, so a frame whose midpoint falls past the
    final token (possible with a partial last token) maps to the last token.
    At 25 fps on a 40 ms grid this is the identity.
    """
    num_frames = frames_in_clip(grid.clip_duration_ms, fps)
    if not 0 <= frame_index < num_frames:
        raise ValueError(f"frame index {frame_index} out of range [0, {num_frames})")
    midpoint = Fraction(2 * frame_index + 1) * 1000 / (2 * Fraction(fps))
    token = int(midpoint // grid.token_ms)
    return min(max(token, 0), grid.num_tokens - 1)
